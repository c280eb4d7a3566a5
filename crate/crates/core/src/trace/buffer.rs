use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::Thread;

use crossbeam_queue::ArrayQueue;

use super::Span;

pub const DEFAULT_BUFFER_CAPACITY: usize = 65_536;

/// Spans that reached the flusher threshold wake it early.
const WAKE_EVERY: usize = 1_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanCounters {
    pub recorded: u64,
    pub dropped: u64,
    pub shipped: u64,
}

/// Bounded lock-free span ring. A full ring drops the incoming span.
#[derive(Debug)]
pub struct SpanBuffer {
    ring: ArrayQueue<Span>,
    recorded: AtomicU64,
    dropped: AtomicU64,
    shipped: AtomicU64,
    /// Spans announced with `begin` and settled with `end`, so a flush can
    /// wait for spans whose request is still being answered.
    begun: AtomicU64,
    ended: AtomicU64,
    flusher: OnceLock<Thread>,
}

impl SpanBuffer {
    pub fn new(capacity: usize) -> Self {
        SpanBuffer {
            ring: ArrayQueue::new(capacity.max(1)),
            recorded: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            shipped: AtomicU64::new(0),
            begun: AtomicU64::new(0),
            ended: AtomicU64::new(0),
            flusher: OnceLock::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.ring.capacity()
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Appends `span` or counts it as dropped. Returns whether it was kept.
    pub fn record(&self, span: Span) -> bool {
        self.recorded.fetch_add(1, Ordering::Relaxed);
        match self.ring.push(span) {
            Ok(()) => {
                if self.ring.len() % WAKE_EVERY == 0 {
                    if let Some(t) = self.flusher.get() {
                        t.unpark();
                    }
                }
                true
            }
            Err(_) => {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    /// Announces a span that will be recorded (or abandoned) shortly.
    pub fn begin(&self) {
        self.begun.fetch_add(1, Ordering::AcqRel);
    }

    pub fn end(&self) {
        self.ended.fetch_add(1, Ordering::AcqRel);
    }

    pub(crate) fn begun(&self) -> u64 {
        self.begun.load(Ordering::Acquire)
    }

    /// True once as many spans have ended as had begun at `target`. Under
    /// continuous traffic later spans can stand in for earlier ones.
    pub(crate) fn settled(&self, target: u64) -> bool {
        self.ended.load(Ordering::Acquire) >= target
    }

    /// Removes up to `max` spans, oldest first.
    pub fn drain(&self, max: usize) -> Vec<Span> {
        let mut out = Vec::with_capacity(max.min(self.ring.len()));
        while out.len() < max {
            match self.ring.pop() {
                Some(s) => out.push(s),
                None => break,
            }
        }
        out
    }

    pub(crate) fn mark_shipped(&self, n: usize) {
        self.shipped.fetch_add(n as u64, Ordering::Relaxed);
    }

    pub(crate) fn set_flusher(&self, t: Thread) {
        let _ = self.flusher.set(t);
    }

    pub fn counters(&self) -> SpanCounters {
        SpanCounters {
            recorded: self.recorded.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
            shipped: self.shipped.load(Ordering::Relaxed),
        }
    }
}

/// Recording handle for one service. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Tracer {
    service: Arc<str>,
    buffer: Arc<SpanBuffer>,
    enabled: Arc<AtomicBool>,
}

impl Tracer {
    pub fn new(service: &str, buffer: Arc<SpanBuffer>) -> Self {
        Tracer {
            service: service.into(),
            buffer,
            enabled: Arc::new(AtomicBool::new(true)),
        }
    }

    /// A tracer that keeps nothing; spans go to a private buffer and are never shipped.
    pub fn disabled(service: &str) -> Self {
        let t = Tracer::new(service, Arc::new(SpanBuffer::new(1)));
        t.set_enabled(false);
        t
    }

    /// Same buffer and switch, different service name.
    pub fn for_service(&self, service: &str) -> Self {
        Tracer {
            service: service.into(),
            buffer: self.buffer.clone(),
            enabled: self.enabled.clone(),
        }
    }

    pub fn service(&self) -> &Arc<str> {
        &self.service
    }

    pub fn buffer(&self) -> &Arc<SpanBuffer> {
        &self.buffer
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled.load(Ordering::Relaxed)
    }

    pub fn set_enabled(&self, on: bool) {
        self.enabled.store(on, Ordering::Relaxed);
    }

    #[inline]
    pub fn record(&self, span: Span) {
        if self.is_enabled() {
            debug_assert!(span.check().is_ok(), "{span:?}");
            self.buffer.record(span);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{SpanKind, SpanStatus};

    fn span(id: u64) -> Span {
        Span {
            trace_id: 1,
            span_id: id,
            parent_span_id: 0,
            service: "a".into(),
            operation: "Op".into(),
            kind: SpanKind::Server,
            t_start: 0,
            t_end: 10,
            net_ns: 0,
            app_ns: 10,
            status: SpanStatus::Ok,
        }
    }

    #[test]
    fn full_ring_drops_newest() {
        let b = SpanBuffer::new(2);
        assert!(b.record(span(1)));
        assert!(b.record(span(2)));
        assert!(!b.record(span(3)));
        let kept: Vec<u64> = b.drain(10).iter().map(|s| s.span_id).collect();
        assert_eq!(kept, vec![1, 2]);
        let c = b.counters();
        assert_eq!((c.recorded, c.dropped), (3, 1));
    }

    #[test]
    fn disabled_tracer_records_nothing() {
        let t = Tracer::new("a", Arc::new(SpanBuffer::new(4)));
        t.set_enabled(false);
        t.record(span(1));
        assert_eq!(t.buffer().counters().recorded, 0);
    }
}
