use std::collections::HashMap;
use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;

use super::RpcError;
use crate::clock;
use crate::trace::{Span, SpanKind, SpanStatus, Tracer};
use crate::wire::{self, MessageKind, ReadFrame, RpcMessage, DEFAULT_MAX_FRAME};

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub connect_timeout: Duration,
    pub max_frame: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            connect_timeout: Duration::from_secs(2),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

/// Result of one exchange, stamped when the response frame finished decoding
/// on the reader thread.
#[derive(Debug)]
pub struct Completion {
    pub result: Result<RpcMessage, RpcError>,
    pub sent_ns: u64,
    pub arrived_ns: u64,
}

pub enum Waiter {
    Channel(SyncSender<Completion>),
    Callback(Box<dyn FnOnce(Completion) + Send>),
}

impl Waiter {
    fn complete(self, c: Completion) {
        match self {
            Waiter::Channel(tx) => {
                let _ = tx.send(c);
            }
            Waiter::Callback(f) => f(c),
        }
    }
}

struct Pending {
    waiter: Waiter,
    sent_ns: u64,
    deadline_ns: Option<u64>,
}

type Key = (u128, u64);

struct Inner {
    peer: SocketAddr,
    writer: Mutex<TcpStream>,
    pending: Mutex<HashMap<Key, Pending>>,
    closed: AtomicBool,
    max_frame: usize,
}

impl Inner {
    fn fail_all(&self, make: impl Fn() -> RpcError) {
        self.closed.store(true, Ordering::Release);
        let drained: Vec<Pending> = self.pending.lock().drain().map(|(_, p)| p).collect();
        let now = clock::now_ns();
        for p in drained {
            p.waiter.complete(Completion {
                result: Err(make()),
                sent_ns: p.sent_ns,
                arrived_ns: now,
            });
        }
    }
}

/// A multiplexed connection to one server. Many requests may be outstanding;
/// responses are matched to requests by trace and span id.
pub struct RpcClient {
    inner: Arc<Inner>,
}

impl RpcClient {
    pub fn connect(addr: SocketAddr, opts: &ClientOptions) -> Result<RpcClient, RpcError> {
        let stream = TcpStream::connect_timeout(&addr, opts.connect_timeout).map_err(|e| {
            if e.kind() == std::io::ErrorKind::ConnectionRefused {
                RpcError::ConnectionRefused(addr)
            } else {
                RpcError::Io(e)
            }
        })?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let inner = Arc::new(Inner {
            peer: addr,
            writer: Mutex::new(stream),
            pending: Mutex::new(HashMap::new()),
            closed: AtomicBool::new(false),
            max_frame: opts.max_frame,
        });
        let shared = inner.clone();
        thread::Builder::new()
            .name(format!("rpc-client-{addr}"))
            .spawn(move || reader_loop(shared, reader))?;
        Ok(RpcClient { inner })
    }

    pub fn peer(&self) -> SocketAddr {
        self.inner.peer
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    pub fn in_flight(&self) -> usize {
        self.inner.pending.lock().len()
    }

    /// Sends `req` and arranges for `waiter` to receive the outcome. Errors
    /// during send are returned directly and the waiter is dropped.
    pub fn start_call(
        &self,
        req: &RpcMessage,
        waiter: Waiter,
        deadline_ns: Option<u64>,
    ) -> Result<u64, RpcError> {
        if req.kind != MessageKind::Request {
            return Err(RpcError::NotARequest);
        }
        if self.is_closed() {
            return Err(RpcError::ConnectionClosed);
        }
        let frame = wire::encode_frame_with(req, self.inner.max_frame)?;
        let key = (req.context.trace_id, req.context.span_id);
        let sent_ns = clock::now_ns();
        {
            let mut pending = self.inner.pending.lock();
            if pending.contains_key(&key) {
                return Err(RpcError::DuplicateInFlight);
            }
            pending.insert(
                key,
                Pending {
                    waiter,
                    sent_ns,
                    deadline_ns,
                },
            );
        }
        let write = {
            let mut w = self.inner.writer.lock();
            w.write_all(&frame)
        };
        if let Err(e) = write {
            self.inner.pending.lock().remove(&key);
            return Err(RpcError::Io(e));
        }
        Ok(sent_ns)
    }

    /// Blocking request/response exchange.
    pub fn call(&self, req: &RpcMessage, timeout: Duration) -> Result<Completion, RpcError> {
        let (tx, rx) = mpsc::sync_channel(1);
        let sent_ns = self.start_call(req, Waiter::Channel(tx), None)?;
        match rx.recv_timeout(timeout) {
            Ok(c) => Ok(c),
            Err(RecvTimeoutError::Timeout) => {
                let key = (req.context.trace_id, req.context.span_id);
                if self.inner.pending.lock().remove(&key).is_some() {
                    return Err(RpcError::Timeout(timeout));
                }
                // The response raced the timeout and is already in the channel.
                rx.recv().map_err(|_| RpcError::Timeout(timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Ok(Completion {
                result: Err(RpcError::ConnectionClosed),
                sent_ns,
                arrived_ns: clock::now_ns(),
            }),
        }
    }

    /// Forgets a pending request; its waiter is dropped. Returns whether it was pending.
    pub fn cancel(&self, trace_id: u128, span_id: u64) -> bool {
        self.inner.pending.lock().remove(&(trace_id, span_id)).is_some()
    }

    /// Times out every pending request whose deadline is at or before `now_ns`.
    pub fn reap_expired(&self, now_ns: u64) -> usize {
        let expired: Vec<Pending> = {
            let mut pending = self.inner.pending.lock();
            let keys: Vec<Key> = pending
                .iter()
                .filter(|(_, p)| p.deadline_ns.is_some_and(|d| d <= now_ns))
                .map(|(k, _)| *k)
                .collect();
            keys.iter().filter_map(|k| pending.remove(k)).collect()
        };
        let n = expired.len();
        for p in expired {
            let waited = now_ns.saturating_sub(p.sent_ns);
            p.waiter.complete(Completion {
                result: Err(RpcError::Timeout(Duration::from_nanos(waited))),
                sent_ns: p.sent_ns,
                arrived_ns: now_ns,
            });
        }
        n
    }

    /// Fails everything still pending and closes the socket.
    pub fn close(&self) {
        let _ = self.inner.writer.lock().shutdown(Shutdown::Both);
        self.inner.fail_all(|| RpcError::ConnectionClosed);
    }
}

impl Drop for RpcClient {
    fn drop(&mut self) {
        let _ = self.inner.writer.lock().shutdown(Shutdown::Both);
    }
}

fn reader_loop(inner: Arc<Inner>, mut stream: TcpStream) {
    loop {
        let payload = match wire::read_frame(&mut stream, inner.max_frame) {
            Ok(ReadFrame::Frame { payload, .. }) => payload,
            Ok(ReadFrame::Eof) | Err(_) => {
                inner.fail_all(|| RpcError::ConnectionClosed);
                return;
            }
        };
        let msg = match wire::decode_payload(&payload) {
            Ok(m) => m,
            Err(e) => {
                let _ = stream.shutdown(Shutdown::Both);
                inner.fail_all(|| RpcError::Protocol(e.clone()));
                return;
            }
        };
        let arrived_ns = clock::now_ns();
        let key = (msg.context.trace_id, msg.context.span_id);
        let pending = inner.pending.lock().remove(&key);
        if let Some(p) = pending {
            p.waiter.complete(Completion {
                result: Ok(msg),
                sent_ns: p.sent_ns,
                arrived_ns,
            });
        }
    }
}

/// Connects to `endpoint`, performs one exchange, and records exactly one
/// client span bracketing it. Connection failures are recorded as an errored
/// client span.
pub fn call(
    endpoint: SocketAddr,
    request: &RpcMessage,
    timeout: Duration,
    tracer: &Tracer,
) -> Result<RpcMessage, RpcError> {
    let t_start = clock::now_ns();
    let outcome = RpcClient::connect(
        endpoint,
        &ClientOptions {
            connect_timeout: timeout,
            ..ClientOptions::default()
        },
    )
    .and_then(|client| client.call(request, timeout));
    let (result, t_end) = match outcome {
        Ok(c) => (c.result, c.arrived_ns),
        Err(e) => (Err(e), clock::now_ns()),
    };
    let status = match &result {
        Ok(m) if m.kind == MessageKind::Response => SpanStatus::Ok,
        _ => SpanStatus::Error,
    };
    tracer.record(Span {
        trace_id: request.context.trace_id,
        span_id: request.context.span_id,
        parent_span_id: request.context.parent_span_id,
        service: tracer.service().clone(),
        operation: request.method.as_str().into(),
        kind: SpanKind::Client,
        t_start,
        t_end: t_end.max(t_start),
        net_ns: 0,
        app_ns: 0,
        status,
    });
    result
}
