mod common;

use std::collections::{BTreeMap, HashSet};
use std::net::TcpListener;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::diff::{first_difference, outcome, random_requests};
use moviebench::services::proto::{codes, methods};
use moviebench::services::MovieClient;
use moviebench::topology::{launch, with_free_ports, Deployment, LaunchError, LaunchOptions, Runner};

fn exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_moviebench"))
}

fn pid_alive(pid: u32) -> bool {
    std::path::Path::new(&format!("/proc/{pid}")).exists()
        && !std::fs::read_to_string(format!("/proc/{pid}/stat"))
            .map(|s| s.contains(") Z "))
            .unwrap_or(true)
}

#[test]
fn process_runner_serves_and_cleans_up() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::small_dataset(&data, 10, 2);
    let t = with_free_ports(&common::fast_topology()).unwrap();
    let mut o = LaunchOptions::new(Deployment::Microservices, &dir.path().join("w"));
    o.runner = Runner::Processes { exe: exe() };
    o.host.dataset = Some(data.clone());
    let mut h = launch(&t, &o).unwrap();
    let pids = h.pids();
    assert_eq!(pids.len(), t.services.len());
    let c = MovieClient::connect(h.entry_addr(), Duration::from_secs(5)).unwrap();
    assert_eq!(c.browse(4).unwrap().sections.len(), 8);
    let stats = h.stats().unwrap();
    assert_eq!(stats.len(), t.services.len());
    let s = h.shutdown();
    assert!(s.forced().is_empty(), "{:?}", s.forced());
    assert_eq!(s.services.len(), t.services.len());
    std::thread::sleep(Duration::from_millis(200));
    assert!(pids.iter().all(|&p| !pid_alive(p)));
}

#[test]
fn occupied_port_names_the_service_and_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::small_dataset(&data, 10, 2);
    let t = with_free_ports(&common::fast_topology()).unwrap();
    let victim = t.service("plot").unwrap().port;
    let blocker = TcpListener::bind(("127.0.0.1", victim)).unwrap();
    for runner in [Runner::Tasks, Runner::Processes { exe: exe() }] {
        let mut o = LaunchOptions::new(Deployment::Microservices, &dir.path().join("w"));
        o.runner = runner;
        o.host.dataset = Some(data.clone());
        match launch(&t, &o) {
            Err(LaunchError::PortInUse { service, port }) => {
                assert_eq!(service, "plot");
                assert_eq!(port, victim);
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("launch should fail"),
        }
        // Every other port is free again.
        for s in t.services.iter().filter(|s| s.name != "plot") {
            TcpListener::bind(("127.0.0.1", s.port)).unwrap_or_else(|e| panic!("{} still bound: {e}", s.name));
        }
    }
    drop(blocker);
    let mut o = LaunchOptions::new(Deployment::Microservices, &dir.path().join("w"));
    o.host.dataset = Some(data);
    let mut h = launch(&t, &o).unwrap();
    assert_eq!(h.addr("plot").unwrap().port(), victim);
    h.shutdown();
    // Same ports again right after a clean shutdown.
    let mut h = launch(&t, &o).unwrap();
    h.shutdown();
}

#[test]
fn slowdown_is_validated_before_it_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::small_dataset(&data, 10, 2);
    let t = common::fast_topology();
    let mut h = common::launch_tasks(&t, Deployment::Microservices, &data, &dir.path().join("w"), None);
    let bad: BTreeMap<String, f64> = [("plot".to_string(), 0.5), ("nope".to_string(), 0.5)].into();
    assert!(matches!(h.apply_slowdown(&bad), Err(LaunchError::UnknownService(n)) if n == "nope"));
    let neg: BTreeMap<String, f64> = [("plot".to_string(), 0.5), ("rating".to_string(), 0.0)].into();
    assert!(matches!(h.apply_slowdown(&neg), Err(LaunchError::InvalidSlowdown { .. })));
    h.shutdown();
}

/// App time of one service's server spans, before and after a slowdown.
#[test]
fn slowdown_stretches_app_time() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::small_dataset(&data, 10, 2);
    let mut t = common::fast_topology();
    // A cost large enough that timer noise does not matter.
    t.services.iter_mut().find(|s| s.name == "frontend").unwrap().compute_cost = 2_000.0;
    let mut col = moviebench::trace::Collector::start("127.0.0.1:0".parse().unwrap(), &dir.path().join("spans.log")).unwrap();
    let mut h = common::launch_tasks(&t, Deployment::Microservices, &data, &dir.path().join("w"), Some(col.addr()));
    let c = MovieClient::connect(h.entry_addr(), Duration::from_secs(5)).unwrap();
    let mean_app = |h: &moviebench::topology::DeploymentHandle, c: &MovieClient| {
        let mark = col.mark();
        for i in 0..10 {
            c.browse(1 + i % 10).unwrap();
        }
        assert!(h.flush().unwrap());
        let spans = col.spans_since(mark).unwrap().spans;
        let app: Vec<u64> = spans
            .iter()
            .filter(|s| &*s.service == "frontend" && &*s.operation == methods::COMPOSE_PAGE)
            .filter(|s| s.kind == moviebench::trace::SpanKind::Server)
            .map(|s| s.app_ns)
            .collect();
        assert_eq!(app.len(), 10);
        app.iter().sum::<u64>() as f64 / 10.0
    };
    let before = mean_app(&h, &c);
    h.apply_slowdown(&[("frontend".to_string(), 0.25)].into()).unwrap();
    let after = mean_app(&h, &c);
    let ratio = after / before;
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
    h.shutdown();
    col.stop();
}

#[test]
fn concurrent_reviews_all_land() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::small_dataset(&data, 10, 2);
    let t = common::fast_topology();
    for (i, d) in [Deployment::Microservices, Deployment::Monolith].into_iter().enumerate() {
        let mut h = common::launch_tasks(&t, d, &data, &dir.path().join(format!("w{i}")), None);
        let addr = h.entry_addr();
        let before = MovieClient::connect(addr, Duration::from_secs(5))
            .unwrap()
            .browse(5)
            .unwrap()
            .rating()
            .unwrap();
        let threads: Vec<_> = (0..8u64)
            .map(|u| {
                std::thread::spawn(move || {
                    let c = MovieClient::connect(addr, Duration::from_secs(5)).unwrap();
                    (0..5).map(|_| c.compose_review(u + 1, 5, b"ok", 3).unwrap().0).collect::<Vec<_>>()
                })
            })
            .collect();
        let ids: Vec<u64> = threads.into_iter().flat_map(|t| t.join().unwrap()).collect();
        assert_eq!(ids.iter().collect::<HashSet<_>>().len(), 40);
        let c = MovieClient::connect(addr, Duration::from_secs(5)).unwrap();
        let after = c.browse(5).unwrap().rating().unwrap();
        assert_eq!(after.count, before.count + 40);
        assert_eq!(after.sum, before.sum + 120);
        let poor = c.user_auth(2, 5, 2_000_000_000).unwrap_err();
        assert_eq!(poor.code(), Some(codes::INSUFFICIENT_FUNDS));
        h.shutdown();
    }
}

#[test]
fn monolith_and_microservices_answer_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::small_dataset(&data, 30, 11);
    let reqs = random_requests(21, 500, 30, 50);
    let t = common::fast_topology();
    let mut results = Vec::new();
    for (i, d) in [Deployment::Microservices, Deployment::Monolith].into_iter().enumerate() {
        let mut h = common::launch_tasks(&t, d, &data, &dir.path().join(format!("w{i}")), None);
        let c = MovieClient::connect(h.entry_addr(), Duration::from_secs(5)).unwrap();
        let start = Instant::now();
        results.push(reqs.iter().map(|r| outcome(&c, r)).collect::<Vec<_>>());
        eprintln!("{d:?}: {:?}", start.elapsed());
        h.shutdown();
    }
    let kinds: HashSet<&str> = results[0].iter().map(|s| s.split(' ').next().unwrap()).collect();
    assert!(kinds.contains("ok") && kinds.contains("err") && kinds.contains("auth"), "{kinds:?}");
    if let Some(i) = first_difference(&results[0], &results[1]) {
        panic!("request {i} {:?}: {} vs {}", reqs[i], results[0][i], results[1][i]);
    }
}
