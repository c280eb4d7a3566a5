use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::collector::batch_request;
use super::{Span, SpanBuffer, SpanCounters};
use crate::clock;
use crate::rpc::{ClientOptions, RpcClient};
use crate::wire::{IdSource, MessageKind, TraceContext};

#[derive(Debug, Clone)]
pub struct ShipperConfig {
    pub interval: Duration,
    pub batch: usize,
    pub rpc_timeout: Duration,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for ShipperConfig {
    fn default() -> Self {
        ShipperConfig {
            interval: Duration::from_millis(100),
            batch: 1_000,
            rpc_timeout: Duration::from_secs(2),
            initial_backoff: Duration::from_millis(25),
            max_backoff: Duration::from_secs(1),
        }
    }
}

struct Shared {
    buffer: Arc<SpanBuffer>,
    collector: SocketAddr,
    config: ShipperConfig,
    urgent: AtomicBool,
    stop: AtomicBool,
    stop_deadline_ns: AtomicU64,
    in_flight: AtomicUsize,
    batches: AtomicU64,
}

/// Background flusher moving spans from a buffer to the collector.
///
/// Delivery is at-least-once: a batch is removed from the buffer before it is
/// sent and retried until acknowledged.
pub struct SpanShipper {
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
    final_counters: Option<SpanCounters>,
}

impl SpanShipper {
    pub fn start(buffer: Arc<SpanBuffer>, collector: SocketAddr, config: ShipperConfig) -> Self {
        let shared = Arc::new(Shared {
            buffer: buffer.clone(),
            collector,
            config,
            urgent: AtomicBool::new(false),
            stop: AtomicBool::new(false),
            stop_deadline_ns: AtomicU64::new(u64::MAX),
            in_flight: AtomicUsize::new(0),
            batches: AtomicU64::new(0),
        });
        let s = shared.clone();
        let thread = thread::Builder::new()
            .name("span-shipper".into())
            .spawn(move || run(s))
            .expect("spawn span shipper");
        buffer.set_flusher(thread.thread().clone());
        SpanShipper {
            shared,
            thread: Some(thread),
            final_counters: None,
        }
    }

    pub fn buffer(&self) -> &Arc<SpanBuffer> {
        &self.shared.buffer
    }

    /// Number of batches acknowledged by the collector.
    pub fn batches_sent(&self) -> u64 {
        self.shared.batches.load(Ordering::Relaxed)
    }

    fn idle(&self) -> bool {
        self.shared.buffer.is_empty() && self.shared.in_flight.load(Ordering::Acquire) == 0
    }

    /// Waits for spans already begun, then ships everything buffered. Returns whether the buffer was
    /// drained and acknowledged within `timeout`.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let target = self.shared.buffer.begun();
        while !self.shared.buffer.settled(target) {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(1));
        }
        self.shared.urgent.store(true, Ordering::Release);
        if let Some(t) = &self.thread {
            t.thread().unpark();
        }
        while !self.idle() {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(2));
        }
        true
    }

    /// Flushes, then stops the background thread. Idempotent.
    pub fn stop(&mut self, timeout: Duration) -> SpanCounters {
        if let Some(c) = self.final_counters {
            return c;
        }
        let deadline = Instant::now() + timeout;
        self.shared
            .stop_deadline_ns
            .store(clock::now_ns() + timeout.as_nanos() as u64, Ordering::Release);
        self.shared.stop.store(true, Ordering::Release);
        self.flush(timeout);
        if let Some(t) = self.thread.take() {
            t.thread().unpark();
            while !t.is_finished() && Instant::now() < deadline {
                thread::sleep(Duration::from_millis(2));
            }
            if t.is_finished() {
                let _ = t.join();
            }
        }
        let c = self.shared.buffer.counters();
        self.final_counters = Some(c);
        c
    }
}

impl Drop for SpanShipper {
    fn drop(&mut self) {
        self.stop(Duration::from_secs(2));
    }
}

fn send(shared: &Shared, client: &mut Option<RpcClient>, ids: &IdSource, spans: &[Span]) -> bool {
    if client.as_ref().map_or(true, |c| c.is_closed()) {
        *client = RpcClient::connect(
            shared.collector,
            &ClientOptions {
                connect_timeout: shared.config.rpc_timeout,
                ..ClientOptions::default()
            },
        )
        .ok();
    }
    let Some(c) = client.as_ref() else {
        return false;
    };
    let req = batch_request(TraceContext::new_root(ids), spans);
    match c.call(&req, shared.config.rpc_timeout) {
        Ok(done) => matches!(done.result, Ok(m) if m.kind == MessageKind::Response),
        Err(_) => {
            *client = None;
            false
        }
    }
}

fn run(shared: Arc<Shared>) {
    super::lower_thread_priority();
    let ids = IdSource::random();
    let mut client: Option<RpcClient> = None;
    let mut pending: Vec<Span> = Vec::new();
    let mut backoff = shared.config.initial_backoff;
    loop {
        let stopping = shared.stop.load(Ordering::Acquire);
        if pending.is_empty() {
            pending = shared.buffer.drain(shared.config.batch);
            shared.in_flight.store(pending.len(), Ordering::Release);
        }
        if pending.is_empty() {
            if stopping {
                break;
            }
            shared.urgent.store(false, Ordering::Release);
            thread::park_timeout(shared.config.interval);
            continue;
        }
        if send(&shared, &mut client, &ids, &pending) {
            shared.buffer.mark_shipped(pending.len());
            shared.batches.fetch_add(1, Ordering::Relaxed);
            pending.clear();
            shared.in_flight.store(0, Ordering::Release);
            backoff = shared.config.initial_backoff;
            let more = shared.buffer.len() >= shared.config.batch
                || shared.urgent.load(Ordering::Acquire)
                || stopping;
            if !more {
                thread::park_timeout(shared.config.interval);
            }
        } else {
            if stopping && clock::now_ns() >= shared.stop_deadline_ns.load(Ordering::Acquire) {
                break;
            }
            thread::park_timeout(backoff);
            backoff = (backoff * 2).min(shared.config.max_backoff);
        }
    }
}
