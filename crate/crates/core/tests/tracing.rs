mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use moviebench::loadgen::{run_load, Arrival, LoadConfig, RequestMix, RunResult};
use moviebench::rpc::HEALTH_METHOD;
use moviebench::services::MovieClient;
use moviebench::topology::{Deployment, DeploymentHandle};
use moviebench::trace::{assemble, Collector, Span, SpanBuffer, SpanKind, SpanShipper};

fn cfg(rate: f64, secs: u64) -> LoadConfig {
    LoadConfig {
        mix: RequestMix::default(),
        rate,
        duration: Duration::from_secs(secs),
        warmup: Duration::from_millis(200),
        seed: 17,
        arrival: Arrival::Poisson,
        timeout: Duration::from_secs(5),
        connections: 2,
        movies: 20,
        users: 50,
        rent_price: 1,
    }
}

/// Checks recorded = persisted + dropped per server and that every
/// successful entry request assembled into exactly one trace.
fn check_conservation(h: &mut DeploymentHandle, col: &Collector, mark: u64, r: &RunResult) {
    assert!(h.flush().unwrap());
    let persisted = col.persisted_by_service();
    let summary = h.shutdown();
    let mut dropped = 0;
    for s in &summary.services {
        let c = s.stats.spans;
        let p = persisted.get(&s.name).copied().unwrap_or(0);
        assert_eq!(c.recorded, p + c.dropped, "{}: {c:?} persisted {p}", s.name);
        dropped += c.dropped;
    }
    assert_eq!(dropped, 0);
    let spans: Vec<Span> = col.spans_since(mark).unwrap().spans;
    let (trees, orphans) = assemble(spans);
    assert!(orphans.is_empty(), "{} orphans", orphans.len());
    let requests = trees
        .iter()
        .filter(|t| t.root_server().is_some_and(|n| &*n.span.operation != HEALTH_METHOD))
        .count() as u64;
    assert_eq!(requests, r.entry_rpcs_ok);
}

fn deploy(d: Deployment, dir: &Path, col: &Collector) -> DeploymentHandle {
    let data = dir.join("data");
    if !data.exists() {
        common::small_dataset(&data, 20, 3);
    }
    common::launch_tasks(&common::fast_topology(), d, &data, &dir.join(format!("w{d:?}")), Some(col.addr()))
}

#[test]
fn spans_are_conserved_on_both_deployments() {
    let dir = tempfile::tempdir().unwrap();
    for d in [Deployment::Microservices, Deployment::Monolith] {
        let col = Collector::start("127.0.0.1:0".parse().unwrap(), &dir.path().join(format!("{d:?}.log"))).unwrap();
        let mark = col.mark();
        let mut h = deploy(d, dir.path(), &col);
        let r = run_load(h.entry_addr(), &cfg(30.0, 2)).unwrap();
        assert_eq!(r.errors + r.timeouts + r.shed, 0, "{r:?}");
        check_conservation(&mut h, &col, mark, &r);
    }
}

#[test]
fn collector_outage_loses_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("spans.log");
    let mut col = Collector::start("127.0.0.1:0".parse().unwrap(), &log).unwrap();
    let addr = col.addr();
    let mut h = deploy(Deployment::Microservices, dir.path(), &col);
    let entry = h.entry_addr();
    let load = std::thread::spawn(move || run_load(entry, &cfg(30.0, 3)).unwrap());
    std::thread::sleep(Duration::from_millis(800));
    col.stop();
    drop(col);
    std::thread::sleep(Duration::from_secs(1));
    let col = Collector::start(addr, &log).unwrap();
    let r = load.join().unwrap();
    assert_eq!(r.errors + r.timeouts, 0, "{r:?}");
    check_conservation(&mut h, &col, 0, &r);
}

#[test]
fn redelivered_spans_are_stored_once() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("spans.log");
    let mut col = Collector::start("127.0.0.1:0".parse().unwrap(), &log).unwrap();
    let mut h = deploy(Deployment::Microservices, dir.path(), &col);
    let c = MovieClient::connect(h.entry_addr(), Duration::from_secs(5)).unwrap();
    c.browse(2).unwrap();
    assert!(h.flush().unwrap());
    h.shutdown();
    let first = col.spans_since(0).unwrap().spans;
    assert!(first.iter().filter(|s| s.kind == SpanKind::Client).count() >= 8);
    // Deliver the whole log a second time.
    let buffer = Arc::new(SpanBuffer::new(first.len() + 8));
    for s in &first {
        assert!(buffer.record(s.clone()));
    }
    let mut shipper = SpanShipper::start(buffer, col.addr(), Default::default());
    shipper.stop(Duration::from_secs(5));
    assert_eq!(col.persisted() as usize, first.len());
    assert_eq!(col.duplicates() as usize, first.len());
    assert_eq!(col.persisted_by_service().values().sum::<u64>() as usize, first.len());
    col.stop();
    drop(col);
    // A restart on the same log still recognizes old spans.
    let col = Collector::start("127.0.0.1:0".parse().unwrap(), &log).unwrap();
    assert_eq!(col.persisted() as usize, first.len());
    let mut shipper = SpanShipper::start(Arc::new(SpanBuffer::new(4)), col.addr(), Default::default());
    shipper.buffer().record(first[0].clone());
    shipper.stop(Duration::from_secs(5));
    assert_eq!(col.persisted() as usize, first.len());
    assert_eq!(col.duplicates(), 1);
}
