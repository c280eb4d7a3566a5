use std::cell::Cell;
use std::collections::HashMap;
use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender, TrySendError};
use parking_lot::Mutex;

use super::{HEALTH_METHOD, SHED_CODE, UNAVAILABLE_CODE};
use crate::clock;
use crate::trace::{Span, SpanKind, SpanStatus, Tracer};
use crate::wire::{self, Field, MessageKind, ReadFrame, RpcMessage, DEFAULT_MAX_FRAME};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub name: Arc<str>,
    pub workers: usize,
    pub queue_capacity: usize,
    pub max_frame: usize,
}

impl ServerConfig {
    pub fn new(name: &str, workers: usize, queue_capacity: usize) -> Self {
        ServerConfig {
            name: name.into(),
            workers: workers.max(1),
            queue_capacity: queue_capacity.max(1),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

/// Application-level failure carried back as an error message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub code: String,
    pub message: String,
}

impl Fault {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Fault {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Fault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for Fault {}

pub type Reply = Result<Vec<Field>, Fault>;

/// A decoded request as seen by a worker.
pub struct Request {
    pub msg: RpcMessage,
    pub received_ns: u64,
    /// Time the handler spent blocked on outgoing calls. It is left out of
    /// the span's `app_ns`.
    pub blocked_ns: Cell<u64>,
}

/// Service behaviour plugged into an [`RpcServer`].
pub trait Handler: Send + Sync + 'static {
    /// Per-worker state, created once on each worker thread.
    type Worker: Send + 'static;

    fn worker(&self, index: usize) -> Self::Worker;

    fn handle(&self, worker: &mut Self::Worker, req: &Request) -> Reply;

    /// Control-plane methods answered inline on the connection thread,
    /// bypassing admission and tracing.
    fn admin(&self, _req: &RpcMessage) -> Option<Reply> {
        None
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub handled: AtomicU64,
    pub errors: AtomicU64,
    pub shed: AtomicU64,
}

impl ServerStats {
    pub fn shed(&self) -> u64 {
        self.shed.load(Ordering::Relaxed)
    }
}

struct Job {
    msg: RpcMessage,
    started_ns: u64,
    recv_ns: u64,
    conn: Arc<Mutex<TcpStream>>,
}

struct Shared {
    config: ServerConfig,
    tracer: Option<Tracer>,
    stats: Arc<ServerStats>,
    stopping: AtomicBool,
    conns: Mutex<HashMap<u64, TcpStream>>,
    next_conn: AtomicU64,
    sender: Mutex<Option<Sender<Job>>>,
}

impl Shared {
    fn begin(&self) {
        if let Some(t) = &self.tracer {
            t.buffer().begin();
        }
    }

    fn end(&self) {
        if let Some(t) = &self.tracer {
            t.buffer().end();
        }
    }

    fn record(&self, msg: &RpcMessage, t_start: u64, t_end: u64, net: u64, app: u64, ok: bool) {
        let Some(tracer) = &self.tracer else { return };
        let ctx = msg.context;
        if ctx.trace_id == 0 || ctx.span_id == 0 {
            return;
        }
        let t_end = t_end.max(t_start);
        let net = net.min(t_end - t_start);
        let app = app.min(t_end - t_start - net);
        tracer.record(Span {
            trace_id: ctx.trace_id,
            span_id: ctx.span_id,
            parent_span_id: ctx.parent_span_id,
            service: self.config.name.clone(),
            operation: msg.method.as_str().into(),
            kind: SpanKind::Server,
            t_start,
            t_end,
            net_ns: net,
            app_ns: app,
            status: if ok { SpanStatus::Ok } else { SpanStatus::Error },
        });
    }
}

pub struct RpcServer;

impl RpcServer {
    /// Starts serving on an already-bound listener.
    pub fn start<H: Handler>(
        listener: TcpListener,
        config: ServerConfig,
        handler: Arc<H>,
        tracer: Option<Tracer>,
    ) -> std::io::Result<ServerHandle> {
        let addr = listener.local_addr()?;
        let (tx, rx) = crossbeam_channel::bounded::<Job>(config.queue_capacity);
        let stats = Arc::new(ServerStats::default());
        let shared = Arc::new(Shared {
            config: config.clone(),
            tracer,
            stats: stats.clone(),
            stopping: AtomicBool::new(false),
            conns: Mutex::new(HashMap::new()),
            next_conn: AtomicU64::new(0),
            sender: Mutex::new(Some(tx)),
        });

        let mut workers = Vec::with_capacity(config.workers);
        for i in 0..config.workers {
            let rx = rx.clone();
            let shared = shared.clone();
            let handler = handler.clone();
            workers.push(
                thread::Builder::new()
                    .name(format!("{}-w{i}", config.name))
                    .spawn(move || worker_loop(i, rx, shared, handler))?,
            );
        }
        drop(rx);

        let accept_shared = shared.clone();
        let accept_handler = handler.clone();
        let acceptor = thread::Builder::new()
            .name(format!("{}-accept", config.name))
            .spawn(move || accept_loop(listener, accept_shared, accept_handler))?;

        Ok(ServerHandle {
            addr,
            shared,
            stats,
            acceptor: Some(acceptor),
            workers,
            outcome: None,
        })
    }
}

fn accept_loop<H: Handler>(listener: TcpListener, shared: Arc<Shared>, handler: Arc<H>) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::Acquire) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        let (Ok(reader), Ok(registry)) = (stream.try_clone(), stream.try_clone()) else {
            continue;
        };
        let id = shared.next_conn.fetch_add(1, Ordering::Relaxed);
        shared.conns.lock().insert(id, registry);
        let shared = shared.clone();
        let handler = handler.clone();
        let conn = Arc::new(Mutex::new(stream));
        let spawned = thread::Builder::new()
            .name(format!("{}-conn{id}", shared.config.name))
            .spawn({
                let shared = shared.clone();
                move || {
                    conn_loop(reader, conn, &shared, &*handler);
                    shared.conns.lock().remove(&id);
                }
            });
        if spawned.is_err() {
            shared.conns.lock().remove(&id);
        }
    }
}

fn write_msg(conn: &Mutex<TcpStream>, msg: &RpcMessage, max_frame: usize) -> bool {
    let frame = match wire::encode_frame_with(msg, max_frame) {
        Ok(f) => f,
        Err(e) => {
            let err = RpcMessage::error(msg.context, "Protocol", &e.to_string());
            match wire::encode_frame(&err) {
                Ok(f) => f,
                Err(_) => return false,
            }
        }
    };
    conn.lock().write_all(&frame).is_ok()
}

fn reply_message(ctx: crate::wire::TraceContext, reply: Reply) -> RpcMessage {
    match reply {
        Ok(fields) => RpcMessage::response(ctx, fields),
        Err(f) => RpcMessage::error(ctx, &f.code, &f.message),
    }
}

fn conn_loop<H: Handler>(
    mut reader: TcpStream,
    conn: Arc<Mutex<TcpStream>>,
    shared: &Shared,
    handler: &H,
) {
    let max_frame = shared.config.max_frame;
    loop {
        let (payload, started_ns) = match wire::read_frame(&mut reader, max_frame) {
            Ok(ReadFrame::Frame {
                payload,
                started_ns,
            }) => (payload, started_ns),
            Ok(ReadFrame::Eof) | Err(_) => break,
        };
        let msg = match wire::decode_payload(&payload) {
            Ok(m) if m.kind == MessageKind::Request => m,
            _ => break,
        };
        drop(payload);
        let recv_ns = clock::now_ns();

        if let Some(reply) = handler.admin(&msg) {
            if !write_msg(&conn, &reply_message(msg.context, reply), max_frame) {
                break;
            }
            continue;
        }

        shared.begin();
        let sender = shared.sender.lock().clone();
        let job = Job {
            msg,
            started_ns,
            recv_ns,
            conn: conn.clone(),
        };
        let rejected = match sender {
            Some(tx) => match tx.try_send(job) {
                Ok(()) => None,
                Err(TrySendError::Full(job)) => {
                    shared.stats.shed.fetch_add(1, Ordering::Relaxed);
                    Some((job, SHED_CODE))
                }
                Err(TrySendError::Disconnected(job)) => Some((job, UNAVAILABLE_CODE)),
            },
            None => Some((job, UNAVAILABLE_CODE)),
        };
        if let Some((job, code)) = rejected {
            shared.stats.errors.fetch_add(1, Ordering::Relaxed);
            let text = if code == SHED_CODE { "admission queue full" } else { "server stopping" };
            let err = RpcMessage::error(job.msg.context, code, text);
            let send_start = clock::now_ns();
            let ok = write_msg(&conn, &err, max_frame);
            let t_end = clock::now_ns();
            let net = (recv_ns - started_ns) + (t_end - send_start);
            shared.record(&job.msg, started_ns, t_end, net, 0, false);
            shared.end();
            if !ok {
                break;
            }
        }
    }
    let _ = reader.shutdown(Shutdown::Read);
}

fn worker_loop<H: Handler>(index: usize, rx: Receiver<Job>, shared: Arc<Shared>, handler: Arc<H>) {
    let mut state = handler.worker(index);
    let max_frame = shared.config.max_frame;
    while let Ok(job) = rx.recv() {
        let dequeued = clock::now_ns();
        let request = Request {
            msg: job.msg,
            received_ns: dequeued,
            blocked_ns: Cell::new(0),
        };
        let reply = if request.msg.method == HEALTH_METHOD {
            Ok(vec![Field::new(0, b"OK".to_vec())])
        } else {
            handler.handle(&mut state, &request)
        };
        let app_end = clock::now_ns();
        let ok = reply.is_ok();
        let response = reply_message(request.msg.context, reply);
        write_msg(&job.conn, &response, max_frame);
        let t_end = clock::now_ns();
        if ok {
            shared.stats.handled.fetch_add(1, Ordering::Relaxed);
        } else {
            shared.stats.errors.fetch_add(1, Ordering::Relaxed);
        }
        let net = (job.recv_ns - job.started_ns) + (t_end - app_end);
        shared.record(
            &request.msg,
            job.started_ns,
            t_end,
            net,
            (app_end - dequeued).saturating_sub(request.blocked_ns.get()),
            ok,
        );
        shared.end();
    }
}

/// Outcome of a graceful stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopOutcome {
    /// Workers were still busy when the grace period ran out.
    pub forced: bool,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stats: Arc<ServerStats>,
    acceptor: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
    outcome: Option<StopOutcome>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn name(&self) -> &Arc<str> {
        &self.shared.config.name
    }

    pub fn stats(&self) -> &Arc<ServerStats> {
        &self.stats
    }

    pub fn tracer(&self) -> Option<&Tracer> {
        self.shared.tracer.as_ref()
    }

    /// Stops accepting, lets queued requests finish, and waits up to `grace`
    /// for workers. Idempotent.
    pub fn stop(&mut self, grace: Duration) -> StopOutcome {
        if let Some(o) = self.outcome {
            return o;
        }
        let deadline = Instant::now() + grace;
        self.shared.stopping.store(true, Ordering::Release);
        let mut wake = self.addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(std::net::Ipv4Addr::LOCALHOST.into());
        }
        let _ = TcpStream::connect_timeout(&wake, Duration::from_millis(200));
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for (_, s) in self.shared.conns.lock().iter() {
            let _ = s.shutdown(Shutdown::Read);
        }
        self.shared.sender.lock().take();

        let mut forced = false;
        for w in self.workers.drain(..) {
            while !w.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(2));
            }
            if w.is_finished() {
                let _ = w.join();
            } else {
                forced = true;
            }
        }
        for (_, s) in self.shared.conns.lock().iter() {
            let _ = s.shutdown(Shutdown::Both);
        }
        let o = StopOutcome { forced };
        self.outcome = Some(o);
        o
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop(Duration::from_secs(5));
    }
}
