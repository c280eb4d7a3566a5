//! Starting and stopping a whole deployment.
//!
//! Services run either as threads of the calling process ([`Runner::Tasks`])
//! or as one `moviebench serve` child process each ([`Runner::Processes`]).
//! Either way the launcher returns only once every server answers `Health`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{validate, ServiceTopology, Violation};
use crate::rpc::{ClientOptions, RpcClient, HEALTH_METHOD};
use crate::services::control::{slowdown_request, ServiceStats};
use crate::services::proto::methods;
use crate::services::{admin_call, HostOptions, RunningMonolith, RunningService, ServiceError, ServiceSummary};
use crate::trace::SpanCounters;
use crate::wire::{Field, IdSource, MessageKind, RpcMessage, TraceContext};

pub const DEFAULT_READINESS_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_GRACE: Duration = Duration::from_secs(5);
const ADMIN_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub enum Runner {
    /// Every service as threads of this process.
    Tasks,
    /// One child process per server, running `exe serve ...`.
    Processes { exe: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deployment {
    Microservices,
    /// All handlers in one server that takes the entry service's name and port.
    Monolith,
}

#[derive(Debug, Clone)]
pub struct LaunchOptions {
    pub runner: Runner,
    pub deployment: Deployment,
    pub host: HostOptions,
    pub readiness_timeout: Duration,
    pub grace: Duration,
}

impl LaunchOptions {
    pub fn new(deployment: Deployment, work_dir: &Path) -> Self {
        LaunchOptions {
            runner: Runner::Tasks,
            deployment,
            host: HostOptions::new(work_dir),
            readiness_timeout: DEFAULT_READINESS_TIMEOUT,
            grace: DEFAULT_GRACE,
        }
    }
}

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("invalid topology: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error("port {port} for service {service} is in use")]
    PortInUse { service: String, port: u16 },
    #[error("failed to start {service}: {reason}")]
    SpawnFailure { service: String, reason: String },
    #[error("{service} not healthy within {deadline:?}")]
    ReadinessTimeout { service: String, deadline: Duration },
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("slowdown for {service} must be positive, got {factor}")]
    InvalidSlowdown { service: String, factor: f64 },
    #[error("control request to {service} failed: {reason}")]
    Control { service: String, reason: String },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Outcome of a shutdown. `forced` lists services that had to be killed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentSummary {
    pub services: Vec<ServiceSummary>,
}

impl DeploymentSummary {
    pub fn forced(&self) -> Vec<&str> {
        self.services
            .iter()
            .filter(|s| s.forced)
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn totals(&self) -> SpanCounters {
        self.services.iter().fold(SpanCounters::default(), |a, s| SpanCounters {
            recorded: a.recorded + s.stats.spans.recorded,
            dropped: a.dropped + s.stats.spans.dropped,
            shipped: a.shipped + s.stats.spans.shipped,
        })
    }
}

enum Member {
    Task(RunningService),
    Mono(RunningMonolith),
    Process {
        child: Child,
        stdout: Option<ChildStdout>,
    },
}

struct Server {
    name: String,
    addr: SocketAddr,
    member: Member,
}

pub struct DeploymentHandle {
    deployment: Deployment,
    topology: ServiceTopology,
    /// In shutdown order: callers before callees.
    servers: Vec<Server>,
    collector: Option<SocketAddr>,
    grace: Duration,
    summary: Option<DeploymentSummary>,
}

/// Binds one loopback listener per requested port. Port 0 picks a free one.
fn bind(name: &str, port: u16) -> Result<TcpListener, LaunchError> {
    TcpListener::bind(("127.0.0.1", port)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            LaunchError::PortInUse {
                service: name.into(),
                port,
            }
        } else {
            LaunchError::SpawnFailure {
                service: name.into(),
                reason: e.to_string(),
            }
        }
    })
}

/// Replaces every port 0 with a currently free port.
pub fn with_free_ports(t: &ServiceTopology) -> std::io::Result<ServiceTopology> {
    let mut out = t.clone();
    let mut held = Vec::new();
    for s in &mut out.services {
        if s.port == 0 {
            let l = TcpListener::bind("127.0.0.1:0")?;
            s.port = l.local_addr()?.port();
            held.push(l);
        }
    }
    Ok(out)
}

/// Services ordered so that every caller precedes its callees.
fn caller_first(t: &ServiceTopology) -> Vec<String> {
    let mut indeg: HashMap<&str, usize> = t.services.iter().map(|s| (s.name.as_str(), 0)).collect();
    for e in &t.edges {
        *indeg.entry(e.callee.as_str()).or_default() += 1;
    }
    let mut ready: Vec<&str> = t
        .services
        .iter()
        .map(|s| s.name.as_str())
        .filter(|n| indeg[n] == 0)
        .collect();
    ready.reverse();
    let mut order = Vec::new();
    while let Some(n) = ready.pop() {
        order.push(n.to_owned());
        for e in t.callees(n).into_iter().rev() {
            let d = indeg.get_mut(e.callee.as_str()).expect("validated");
            *d -= 1;
            if *d == 0 {
                ready.push(&e.callee);
            }
        }
    }
    order
}

/// Sends `Health` until it answers `OK` or `deadline` passes.
pub fn probe_health(addr: SocketAddr, deadline: Instant) -> bool {
    let opts = ClientOptions {
        connect_timeout: Duration::from_millis(250),
        ..ClientOptions::default()
    };
    while Instant::now() < deadline {
        if let Ok(c) = RpcClient::connect(addr, &opts) {
            let req = RpcMessage::request(TraceContext::new_root(IdSource::global()), HEALTH_METHOD, vec![]);
            let left = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(50));
            if let Ok(done) = c.call(&req, left) {
                if let Ok(m) = done.result {
                    if m.kind == MessageKind::Response && m.field(0) == Some(&b"OK"[..]) {
                        return true;
                    }
                }
            }
        }
        thread::sleep(Duration::from_millis(20));
    }
    false
}

fn fail(name: &str, e: ServiceError) -> LaunchError {
    LaunchError::SpawnFailure {
        service: name.into(),
        reason: e.to_string(),
    }
}

/// Starts `t` and waits until every server is healthy. On any failure all
/// servers already started are stopped before the error is returned.
pub fn launch(t: &ServiceTopology, opts: &LaunchOptions) -> Result<DeploymentHandle, LaunchError> {
    let violations = validate(t);
    if !violations.is_empty() {
        return Err(LaunchError::Invalid(violations));
    }
    let names: Vec<String> = match opts.deployment {
        Deployment::Microservices => caller_first(t),
        Deployment::Monolith => vec![t.entry.clone()],
    };
    let mut listeners = Vec::new();
    for n in &names {
        let port = t.service(n).expect("validated").port;
        listeners.push(bind(n, port)?);
    }
    let mut topo = t.clone();
    let mut addrs = HashMap::new();
    for (n, l) in names.iter().zip(&listeners) {
        let addr = l.local_addr().map_err(|e| LaunchError::SpawnFailure {
            service: n.clone(),
            reason: e.to_string(),
        })?;
        topo.service_mut(n).expect("validated").port = addr.port();
        addrs.insert(n.clone(), addr);
    }
    let mut handle = DeploymentHandle {
        deployment: opts.deployment,
        topology: topo.clone(),
        servers: Vec::new(),
        collector: opts.host.collector,
        grace: opts.grace,
        summary: None,
    };
    match &opts.runner {
        Runner::Tasks => {
            for (n, l) in names.iter().zip(listeners) {
                let member = match opts.deployment {
                    Deployment::Microservices => {
                        Member::Task(RunningService::start(&topo, n, l, addrs.clone(), &opts.host).map_err(|e| fail(n, e))?)
                    }
                    Deployment::Monolith => {
                        Member::Mono(RunningMonolith::start(&topo, l, &opts.host).map_err(|e| fail(n, e))?)
                    }
                };
                handle.servers.push(Server {
                    name: n.clone(),
                    addr: addrs[n],
                    member,
                });
            }
        }
        Runner::Processes { exe } => {
            drop(listeners);
            std::fs::create_dir_all(&opts.host.work_dir).map_err(|e| LaunchError::SpawnFailure {
                service: names[0].clone(),
                reason: e.to_string(),
            })?;
            let topo_path = opts.host.work_dir.join("deployment.topo");
            std::fs::write(&topo_path, topo.to_text()).map_err(|e| LaunchError::SpawnFailure {
                service: names[0].clone(),
                reason: e.to_string(),
            })?;
            for n in &names {
                let child = spawn_serve(exe, &topo_path, n, opts).map_err(|e| LaunchError::SpawnFailure {
                    service: n.clone(),
                    reason: e.to_string(),
                })?;
                handle.servers.push(Server {
                    name: n.clone(),
                    addr: addrs[n],
                    member: Member::Process {
                        child,
                        stdout: None,
                    },
                });
                let s = handle.servers.last_mut().expect("just pushed");
                if let Member::Process { child, stdout } = &mut s.member {
                    *stdout = child.stdout.take();
                }
            }
        }
    }
    let deadline = Instant::now() + opts.readiness_timeout;
    for s in &mut handle.servers {
        if let Member::Process { child, .. } = &mut s.member {
            if let Ok(Some(status)) = child.try_wait() {
                return Err(LaunchError::SpawnFailure {
                    service: s.name.clone(),
                    reason: format!("exited with {status}"),
                });
            }
        }
        if !probe_health(s.addr, deadline) {
            return Err(LaunchError::ReadinessTimeout {
                service: s.name.clone(),
                deadline: opts.readiness_timeout,
            });
        }
    }
    Ok(handle)
}

fn spawn_serve(exe: &Path, topo: &Path, name: &str, opts: &LaunchOptions) -> std::io::Result<Child> {
    let mut cmd = Command::new(exe);
    cmd.arg("serve")
        .arg("--topology")
        .arg(topo)
        .arg("--work-dir")
        .arg(&opts.host.work_dir)
        .arg("--rpc-timeout-ms")
        .arg(opts.host.rpc_timeout.as_millis().to_string())
        .arg("--grace-ms")
        .arg(opts.grace.as_millis().to_string());
    match opts.deployment {
        Deployment::Microservices => cmd.arg("--service").arg(name),
        Deployment::Monolith => cmd.arg("--monolith"),
    };
    if let Some(d) = &opts.host.dataset {
        cmd.arg("--dataset").arg(d);
    }
    if let Some(c) = opts.host.collector {
        cmd.arg("--collector").arg(c.to_string());
    }
    if !opts.host.tracing {
        cmd.arg("--no-tracing");
    }
    cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit());
    cmd.spawn()
}

/// Line a `serve` process prints on stdout after a graceful stop.
pub fn summary_line(s: &ServiceSummary) -> String {
    format!(
        "summary {} {} {} {} {} {} {} {}",
        s.name,
        s.stats.spans.recorded,
        s.stats.spans.dropped,
        s.stats.spans.shipped,
        s.stats.shed,
        s.stats.handled,
        s.stats.errors,
        s.forced as u8
    )
}

pub fn parse_summary_line(line: &str) -> Option<ServiceSummary> {
    let p: Vec<&str> = line.split_whitespace().collect();
    if p.len() != 9 || p[0] != "summary" {
        return None;
    }
    let n = |i: usize| p[i].parse::<u64>().ok();
    Some(ServiceSummary {
        name: p[1].to_owned(),
        stats: ServiceStats {
            spans: SpanCounters {
                recorded: n(2)?,
                dropped: n(3)?,
                shipped: n(4)?,
            },
            shed: n(5)?,
            handled: n(6)?,
            errors: n(7)?,
        },
        forced: n(8)? != 0,
    })
}

impl DeploymentHandle {
    pub fn deployment(&self) -> Deployment {
        self.deployment
    }

    /// The topology with the ports actually bound.
    pub fn topology(&self) -> &ServiceTopology {
        &self.topology
    }

    pub fn collector(&self) -> Option<SocketAddr> {
        self.collector
    }

    pub fn entry_addr(&self) -> SocketAddr {
        self.addr(&self.topology.entry).expect("entry is always served")
    }

    pub fn addr(&self, name: &str) -> Option<SocketAddr> {
        self.servers.iter().find(|s| s.name == name).map(|s| s.addr)
    }

    /// Names of the servers, callers first.
    pub fn servers(&self) -> Vec<&str> {
        self.servers.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn pids(&self) -> Vec<u32> {
        self.servers
            .iter()
            .filter_map(|s| match &s.member {
                Member::Process { child, .. } => Some(child.id()),
                _ => None,
            })
            .collect()
    }

    pub fn is_shut_down(&self) -> bool {
        self.summary.is_some()
    }

    fn admin_all(&self, req: &RpcMessage) -> Result<Vec<(String, Vec<Field>)>, LaunchError> {
        self.servers
            .iter()
            .map(|s| {
                admin_call(s.addr, req, ADMIN_TIMEOUT)
                    .map(|f| (s.name.clone(), f))
                    .map_err(|f| LaunchError::Control {
                        service: s.name.clone(),
                        reason: f.to_string(),
                    })
            })
            .collect()
    }

    fn root(&self) -> TraceContext {
        TraceContext::new_root(IdSource::global())
    }

    /// Live-updates slowdown factors. Every name and factor is checked before
    /// any service is touched.
    pub fn apply_slowdown(&self, profile: &BTreeMap<String, f64>) -> Result<(), LaunchError> {
        for (name, &factor) in profile {
            if self.topology.service(name).is_none() {
                return Err(LaunchError::UnknownService(name.clone()));
            }
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(LaunchError::InvalidSlowdown {
                    service: name.clone(),
                    factor,
                });
            }
        }
        for (name, &factor) in profile {
            let (target, addr) = match self.deployment {
                Deployment::Microservices => (name.as_str(), self.addr(name).expect("checked")),
                Deployment::Monolith => (self.topology.entry.as_str(), self.entry_addr()),
            };
            admin_call(addr, &slowdown_request(self.root(), name, factor), ADMIN_TIMEOUT).map_err(|f| {
                LaunchError::Control {
                    service: target.to_owned(),
                    reason: f.to_string(),
                }
            })?;
        }
        Ok(())
    }

    /// Same factor for every logical service.
    pub fn apply_global_slowdown(&self, factor: f64) -> Result<(), LaunchError> {
        let profile = self
            .topology
            .services
            .iter()
            .map(|s| (s.name.clone(), factor))
            .collect();
        self.apply_slowdown(&profile)
    }

    pub fn set_tracing(&self, on: bool) -> Result<(), LaunchError> {
        let req = RpcMessage::request(self.root(), methods::SET_TRACING, vec![Field::new(0, vec![on as u8])]);
        self.admin_all(&req).map(|_| ())
    }

    /// Asks every server to ship its buffered spans; true if all confirmed.
    pub fn flush(&self) -> Result<bool, LaunchError> {
        let req = RpcMessage::request(self.root(), methods::FLUSH, vec![]);
        Ok(self
            .admin_all(&req)?
            .iter()
            .all(|(_, f)| f.first().is_some_and(|f| f.value == [1])))
    }

    pub fn stats(&self) -> Result<BTreeMap<String, ServiceStats>, LaunchError> {
        let req = RpcMessage::request(self.root(), methods::STATS, vec![]);
        self.admin_all(&req)?
            .into_iter()
            .map(|(n, f)| {
                ServiceStats::from_fields(&f)
                    .map(|s| (n.clone(), s))
                    .map_err(|e| LaunchError::Control {
                        service: n,
                        reason: e.to_string(),
                    })
            })
            .collect()
    }

    /// Graceful stop of every server, callers first. Idempotent: later calls
    /// return the first summary.
    pub fn shutdown(&mut self) -> DeploymentSummary {
        if let Some(s) = &self.summary {
            return s.clone();
        }
        let grace = self.grace;
        let mut out = Vec::new();
        for s in &mut self.servers {
            out.push(match &mut s.member {
                Member::Task(r) => r.stop(grace),
                Member::Mono(r) => r.stop(grace),
                Member::Process { child, stdout } => stop_process(&s.name, s.addr, child, stdout.take(), grace),
            });
        }
        let summary = DeploymentSummary { services: out };
        for name in summary.forced() {
            log::warn!("{name} did not stop within {grace:?} and was killed");
        }
        self.summary = Some(summary.clone());
        summary
    }
}

fn stop_process(
    name: &str,
    addr: SocketAddr,
    child: &mut Child,
    stdout: Option<ChildStdout>,
    grace: Duration,
) -> ServiceSummary {
    let last_stats = admin_call(
        addr,
        &RpcMessage::request(TraceContext::new_root(IdSource::global()), methods::STATS, vec![]),
        Duration::from_secs(1),
    )
    .ok()
    .and_then(|f| ServiceStats::from_fields(&f).ok())
    .unwrap_or_default();
    let _ = admin_call(
        addr,
        &RpcMessage::request(TraceContext::new_root(IdSource::global()), methods::SHUTDOWN, vec![]),
        Duration::from_secs(1),
    );
    // The child prints its summary and exits; read it on a side thread so a
    // wedged child cannot block the deadline.
    let (tx, rx) = std::sync::mpsc::channel();
    if let Some(mut out) = stdout {
        thread::spawn(move || {
            let mut text = String::new();
            let _ = BufReader::new(&mut out).read_line(&mut text);
            let _ = tx.send(text);
            let mut sink = Vec::new();
            let _ = out.read_to_end(&mut sink);
        });
    }
    let deadline = Instant::now() + grace + Duration::from_secs(1);
    let mut forced = false;
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
            _ => {
                let _ = child.kill();
                let _ = child.wait();
                forced = true;
                break;
            }
        }
    }
    drop(child.stdin.take());
    let reported = rx
        .recv_timeout(Duration::from_millis(200))
        .ok()
        .and_then(|l| parse_summary_line(l.trim()));
    match reported {
        Some(mut s) if !forced => {
            s.name = name.to_owned();
            s
        }
        _ => ServiceSummary {
            name: name.to_owned(),
            stats: last_stats,
            forced: true,
        },
    }
}

impl Drop for DeploymentHandle {
    fn drop(&mut self) {
        if self.summary.is_none() {
            self.shutdown();
        }
    }
}

/// What a `serve` process hosts.
#[derive(Debug, Clone)]
pub enum ServeTarget {
    Service(String),
    Monolith,
}

/// Body of `moviebench serve`: binds the topology's port for `target`, serves
/// until a `Shutdown` request or stdin closing, then stops gracefully.
pub fn serve(
    t: &ServiceTopology,
    target: &ServeTarget,
    opts: &HostOptions,
    grace: Duration,
) -> Result<ServiceSummary, LaunchError> {
    let addrs: HashMap<String, SocketAddr> = t
        .services
        .iter()
        .map(|s| (s.name.clone(), SocketAddr::from(([127, 0, 0, 1], s.port))))
        .collect();
    let (tx, rx) = crossbeam_channel::bounded::<()>(4);
    let stdin_tx = tx.clone();
    thread::spawn(move || {
        let mut sink = Vec::new();
        let _ = std::io::stdin().read_to_end(&mut sink);
        let _ = stdin_tx.try_send(());
    });
    let summary = match target {
        ServeTarget::Service(name) => {
            let spec = t.service(name).ok_or_else(|| LaunchError::UnknownService(name.clone()))?;
            let l = bind(name, spec.port)?;
            let mut r = RunningService::start(t, name, l, addrs, opts).map_err(|e| fail(name, e))?;
            r.on_shutdown(tx);
            let _ = rx.recv();
            r.stop(grace)
        }
        ServeTarget::Monolith => {
            let spec = t
                .entry_spec()
                .ok_or_else(|| LaunchError::UnknownService(t.entry.clone()))?;
            let l = bind(&spec.name, spec.port)?;
            let mut r = RunningMonolith::start(t, l, opts).map_err(|e| fail(&spec.name, e))?;
            r.on_shutdown(tx);
            let _ = rx.recv();
            r.stop(grace)
        }
    };
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::default_topology;

    #[test]
    fn shutdown_order_puts_callers_first() {
        let t = default_topology();
        let order = caller_first(&t);
        assert_eq!(order.len(), t.services.len());
        let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        for e in &t.edges {
            assert!(pos[e.caller.as_str()] < pos[e.callee.as_str()], "{} -> {}", e.caller, e.callee);
        }
        assert_eq!(order[0], "frontend");
    }

    #[test]
    fn summary_line_round_trip() {
        let s = ServiceSummary {
            name: "store".into(),
            stats: ServiceStats {
                spans: SpanCounters {
                    recorded: 10,
                    dropped: 1,
                    shipped: 9,
                },
                shed: 2,
                handled: 7,
                errors: 3,
            },
            forced: false,
        };
        assert_eq!(parse_summary_line(&summary_line(&s)), Some(s));
        assert_eq!(parse_summary_line("summary x 1"), None);
    }
}
