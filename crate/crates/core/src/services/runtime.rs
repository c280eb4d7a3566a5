//! One logical service hosted behind its own RPC server.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

use super::backend::{Backend, BackendError, RUNTIME_ID_INSTANCE};
use super::cache::ByteLru;
use super::compute;
use super::control::{Control, ServiceStats, Slowdown, UNKNOWN_SERVICE};
use super::dataset::Dataset;
use super::ids::UniqueIds;
use super::logic::{self, Call, Env, LocalService};
use super::proto::{self, codes};
use super::store::LogStore;
use crate::clock;
use crate::rpc::{
    ClientOptions, Completion, Fault, Handler, Reply, Request, RpcClient, RpcError, RpcServer, ServerConfig,
    ServerHandle, Waiter, UNAVAILABLE_CODE,
};
use crate::trace::{ShipperConfig, Span, SpanBuffer, SpanKind, SpanShipper, SpanStatus, Tracer};
use crate::topology::ServiceTopology;
use crate::wire::{Field, IdSource, MessageKind, RpcMessage, TraceContext};

pub const DEFAULT_RPC_TIMEOUT: Duration = Duration::from_secs(5);

/// Multiplexed connections kept open to each callee, shared by all workers.
const CONNS_PER_CALLEE: usize = 4;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("service {0} is not in the topology")]
    UnknownService(String),
    #[error("service {service}: {source}")]
    Backend {
        service: String,
        source: BackendError,
    },
    #[error("service {service}: {source}")]
    Io {
        service: String,
        source: std::io::Error,
    },
}

/// Settings common to every hosted service.
#[derive(Debug, Clone)]
pub struct HostOptions {
    pub dataset: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub collector: Option<SocketAddr>,
    pub tracing: bool,
    pub rpc_timeout: Duration,
    pub span_buffer: usize,
    pub id_instance: u16,
    pub shipper: ShipperConfig,
}

impl HostOptions {
    pub fn new(work_dir: &Path) -> Self {
        HostOptions {
            dataset: None,
            work_dir: work_dir.to_owned(),
            collector: None,
            tracing: true,
            rpc_timeout: DEFAULT_RPC_TIMEOUT,
            span_buffer: crate::trace::DEFAULT_BUFFER_CAPACITY,
            id_instance: RUNTIME_ID_INSTANCE,
            shipper: ShipperConfig::default(),
        }
    }

    pub(crate) fn open_dataset(&self) -> Result<Option<Dataset>, ServiceError> {
        match &self.dataset {
            None => Ok(None),
            Some(d) => Dataset::open(d).map(Some).map_err(|e| ServiceError::Io {
                service: "dataset".into(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
            }),
        }
    }

    /// Builds the tracer and, when a collector is configured, its shipper.
    pub(crate) fn tracer(&self, name: &str) -> (Tracer, Option<SpanShipper>) {
        let buffer = Arc::new(SpanBuffer::new(self.span_buffer));
        let tracer = Tracer::new(name, buffer.clone());
        tracer.set_enabled(self.tracing);
        let shipper = self
            .collector
            .map(|c| SpanShipper::start(buffer, c, self.shipper.clone()));
        (tracer, shipper)
    }
}

pub struct ServiceHost {
    local: LocalService,
    cost: f64,
    slowdown: Slowdown,
    conns: HashMap<String, ConnPool>,
    backend: Backend,
    tracer: Tracer,
    rpc_timeout: Duration,
    pub(crate) control: Control,
}

impl ServiceHost {
    pub fn name(&self) -> &str {
        &self.local.name
    }

    pub fn tracer(&self) -> &Tracer {
        &self.tracer
    }

    pub fn slowdown(&self) -> f64 {
        self.slowdown.get()
    }

    pub fn stats(&self) -> ServiceStats {
        self.control.stats(&self.tracer)
    }
}

/// Round-robin set of lazily opened connections to one callee.
struct ConnPool {
    addr: SocketAddr,
    slots: Vec<Mutex<Option<Arc<RpcClient>>>>,
    next: AtomicUsize,
}

impl ConnPool {
    fn new(addr: SocketAddr) -> ConnPool {
        ConnPool {
            addr,
            slots: (0..CONNS_PER_CALLEE).map(|_| Mutex::new(None)).collect(),
            next: AtomicUsize::new(0),
        }
    }

    fn get(&self, timeout: Duration) -> Result<Arc<RpcClient>, Fault> {
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.slots.len();
        let mut slot = self.slots[i].lock();
        if let Some(c) = slot.as_ref().filter(|c| !c.is_closed()) {
            return Ok(c.clone());
        }
        let c = RpcClient::connect(
            self.addr,
            &ClientOptions {
                connect_timeout: timeout,
                ..ClientOptions::default()
            },
        )
        .map(Arc::new)
        .map_err(|e| Fault::new(UNAVAILABLE_CODE, e.to_string()))?;
        *slot = Some(c.clone());
        Ok(c)
    }
}

impl Handler for ServiceHost {
    type Worker = ();

    fn worker(&self, _index: usize) {}

    fn handle(&self, _: &mut (), req: &Request) -> Reply {
        let mut env = RpcEnv {
            host: self,
            ctx: req.msg.context,
            blocked_ns: 0,
        };
        let reply = logic::dispatch(&mut env, &req.msg.method, &req.msg.fields);
        req.blocked_ns.set(env.blocked_ns);
        reply
    }

    fn admin(&self, req: &RpcMessage) -> Option<Reply> {
        self.control.admin(req, &self.tracer, |name, f| {
            if name.is_empty() || name == self.local.name {
                self.slowdown.set(f);
                Ok(())
            } else {
                Err(Fault::new(UNKNOWN_SERVICE, name))
            }
        })
    }
}

struct Started {
    callee: String,
    ctx: TraceContext,
    method: String,
    t_start: u64,
    client: Option<Arc<RpcClient>>,
    rx: Option<Receiver<Completion>>,
    failed: Option<Fault>,
}

struct RpcEnv<'a> {
    host: &'a ServiceHost,
    ctx: TraceContext,
    /// Time spent waiting for replies.
    blocked_ns: u64,
}

impl RpcEnv<'_> {
    fn client(&self, callee: &str) -> Result<Arc<RpcClient>, Fault> {
        self.host
            .conns
            .get(callee)
            .ok_or_else(|| Fault::new(codes::UNCONFIGURED, format!("no address for {callee}")))?
            .get(self.host.rpc_timeout)
    }

    fn start(&mut self, callee: &str, method: &str, fields: Vec<Field>) -> Started {
        let ctx = self.ctx.child(IdSource::global());
        let t_start = clock::now_ns();
        let mut st = Started {
            callee: callee.to_owned(),
            ctx,
            method: method.to_owned(),
            t_start,
            client: None,
            rx: None,
            failed: None,
        };
        let req = RpcMessage::request(ctx, method, fields);
        match self.client(callee) {
            Ok(c) => {
                let (tx, rx) = mpsc::sync_channel(1);
                match c.start_call(&req, Waiter::Channel(tx), None) {
                    Ok(_) => {
                        st.rx = Some(rx);
                        st.client = Some(c);
                    }
                    Err(e) => {
                        if matches!(e, RpcError::Io(_)) {
                            c.close();
                        }
                        st.failed = Some(Fault::new(UNAVAILABLE_CODE, e.to_string()));
                    }
                }
            }
            Err(f) => st.failed = Some(f),
        }
        st
    }

    fn finish(&mut self, st: Started, deadline: Instant) -> Reply {
        let (reply, t_end) = match (st.failed, st.rx) {
            (Some(f), _) => (Err(f), clock::now_ns()),
            (None, Some(rx)) => {
                let wait = deadline.saturating_duration_since(Instant::now());
                let blocked_from = clock::now_ns();
                let got = rx.recv_timeout(wait);
                self.blocked_ns += clock::now_ns() - blocked_from;
                match got {
                    Ok(c) => {
                        let reply = match c.result {
                            Ok(m) => proto::reply_of(m),
                            Err(e) => Err(Fault::new(UNAVAILABLE_CODE, e.to_string())),
                        };
                        (reply, c.arrived_ns)
                    }
                    Err(RecvTimeoutError::Timeout) => {
                        if let Some(c) = &st.client {
                            c.cancel(st.ctx.trace_id, st.ctx.span_id);
                        }
                        (
                            Err(Fault::new(codes::TIMEOUT, format!("{} timed out", st.callee))),
                            clock::now_ns(),
                        )
                    }
                    Err(RecvTimeoutError::Disconnected) => (
                        Err(Fault::new(UNAVAILABLE_CODE, "connection closed")),
                        clock::now_ns(),
                    ),
                }
            }
            (None, None) => (Err(Fault::new(UNAVAILABLE_CODE, "not sent")), clock::now_ns()),
        };
        self.host.tracer.record(Span {
            trace_id: st.ctx.trace_id,
            span_id: st.ctx.span_id,
            parent_span_id: st.ctx.parent_span_id,
            service: self.host.tracer.service().clone(),
            operation: st.method.into(),
            kind: SpanKind::Client,
            t_start: st.t_start,
            t_end: t_end.max(st.t_start),
            net_ns: 0,
            app_ns: 0,
            status: if reply.is_ok() {
                SpanStatus::Ok
            } else {
                SpanStatus::Error
            },
        });
        reply
    }
}

impl Env for RpcEnv<'_> {
    fn local(&self) -> &LocalService {
        &self.host.local
    }

    fn call(&mut self, callee: &str, method: &str, fields: Vec<Field>) -> Reply {
        let deadline = Instant::now() + self.host.rpc_timeout;
        let st = self.start(callee, method, fields);
        self.finish(st, deadline)
    }

    fn call_many(&mut self, calls: Vec<Call>, parallel: bool) -> Vec<Reply> {
        if !parallel {
            return calls
                .into_iter()
                .map(|c| self.call(&c.callee, c.method, c.fields))
                .collect();
        }
        let deadline = Instant::now() + self.host.rpc_timeout;
        let started: Vec<Started> = calls
            .into_iter()
            .map(|c| self.start(&c.callee, c.method, c.fields))
            .collect();
        started.into_iter().map(|s| self.finish(s, deadline)).collect()
    }

    fn compute(&mut self, payload: &[u8]) -> u64 {
        compute::synthetic_compute(payload, self.host.cost, self.host.slowdown.get())
    }

    fn compute_len(&mut self, len: usize, seed: u64) -> u64 {
        compute::synthetic_compute_len(len, seed, self.host.cost, self.host.slowdown.get())
    }

    fn cache(&self) -> Option<&Mutex<ByteLru>> {
        self.host.backend.cache.as_ref()
    }

    fn store(&self) -> Option<&LogStore> {
        self.host.backend.store.as_ref()
    }

    fn ids(&self) -> Option<&UniqueIds> {
        self.host.backend.ids.as_ref()
    }

    fn blobs(&self) -> Option<&Path> {
        self.host.backend.blobs.as_deref()
    }
}

/// Final counters of a stopped service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceSummary {
    pub name: String,
    pub stats: ServiceStats,
    /// Workers were still busy when the grace period ran out.
    pub forced: bool,
}

/// A service serving requests, plus what is needed to stop it cleanly.
pub struct RunningService {
    host: Arc<ServiceHost>,
    server: ServerHandle,
    summary: Option<ServiceSummary>,
}

impl RunningService {
    /// Starts `name` from `topology` on an already-bound listener. `addrs`
    /// maps every service name to the address it listens on.
    pub fn start(
        topology: &ServiceTopology,
        name: &str,
        listener: TcpListener,
        addrs: HashMap<String, SocketAddr>,
        opts: &HostOptions,
    ) -> Result<RunningService, ServiceError> {
        let spec = topology
            .service(name)
            .ok_or_else(|| ServiceError::UnknownService(name.into()))?;
        let local = LocalService::from_topology(topology, name)
            .ok_or_else(|| ServiceError::UnknownService(name.into()))?;
        let dataset = opts.open_dataset()?;
        let backend = Backend::for_service(spec, local.kind, dataset.as_ref(), &opts.work_dir, opts.id_instance)
            .map_err(|source| ServiceError::Backend {
                service: name.into(),
                source,
            })?;
        let (tracer, shipper) = opts.tracer(name);
        let host = Arc::new(ServiceHost {
            local,
            cost: spec.compute_cost,
            slowdown: Slowdown::new(spec.slowdown),
            conns: addrs.into_iter().map(|(n, a)| (n, ConnPool::new(a))).collect(),
            backend,
            tracer: tracer.clone(),
            rpc_timeout: opts.rpc_timeout,
            control: Control::default(),
        });
        *host.control.shipper.lock() = shipper;
        let server = RpcServer::start(
            listener,
            ServerConfig::new(name, spec.workers, spec.queue_capacity),
            host.clone(),
            Some(tracer),
        )
        .map_err(|source| ServiceError::Io {
            service: name.into(),
            source,
        })?;
        let _ = host.control.server_stats.set(server.stats().clone());
        Ok(RunningService {
            host,
            server,
            summary: None,
        })
    }

    pub fn name(&self) -> &str {
        self.host.name()
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.addr()
    }

    pub fn host(&self) -> &Arc<ServiceHost> {
        &self.host
    }

    /// Registers a channel signalled by the `Shutdown` admin call.
    pub fn on_shutdown(&self, tx: crossbeam_channel::Sender<()>) {
        *self.host.control.shutdown.lock() = Some(tx);
    }

    /// Stops accepting, drains queued requests, flushes spans. Idempotent.
    pub fn stop(&mut self, grace: Duration) -> ServiceSummary {
        if let Some(s) = &self.summary {
            return s.clone();
        }
        let start = Instant::now();
        let outcome = self.server.stop(grace);
        let left = grace.saturating_sub(start.elapsed()).max(Duration::from_millis(500));
        self.host.control.stop_shipper(left);
        let s = ServiceSummary {
            name: self.host.name().to_owned(),
            stats: self.host.stats(),
            forced: outcome.forced,
        };
        self.summary = Some(s.clone());
        s
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.stop(Duration::from_secs(5));
    }
}

/// Sends one untraced control request and waits for the reply.
pub fn admin_call(addr: SocketAddr, req: &RpcMessage, timeout: Duration) -> Reply {
    let client = RpcClient::connect(
        addr,
        &ClientOptions {
            connect_timeout: timeout,
            ..ClientOptions::default()
        },
    )
    .map_err(|e| Fault::new(UNAVAILABLE_CODE, e.to_string()))?;
    let done = client
        .call(req, timeout)
        .map_err(|e| Fault::new(UNAVAILABLE_CODE, e.to_string()))?;
    match done.result {
        Ok(m) if m.kind == MessageKind::Response => Ok(m.fields),
        Ok(m) => proto::reply_of(m),
        Err(e) => Err(Fault::new(UNAVAILABLE_CODE, e.to_string())),
    }
}
