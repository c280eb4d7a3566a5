//! Control-plane requests shared by both deployment shapes.

use std::sync::atomic::Ordering;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use crossbeam_channel::Sender;
use parking_lot::Mutex;

use super::proto::{self, methods};
use crate::rpc::{Fault, Reply, ServerStats};
use crate::trace::{SpanCounters, SpanShipper, Tracer};
use crate::wire::{Field, RpcMessage};

/// Live slowdown factor stored as f64 bits.
#[derive(Debug)]
pub struct Slowdown(std::sync::atomic::AtomicU64);

impl Slowdown {
    pub fn new(v: f64) -> Self {
        Slowdown(std::sync::atomic::AtomicU64::new(v.to_bits()))
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }

    pub fn set(&self, v: f64) {
        self.0.store(v.to_bits(), Ordering::Relaxed);
    }
}

/// Counters reported by the `Stats` admin call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServiceStats {
    pub spans: SpanCounters,
    pub shed: u64,
    pub handled: u64,
    pub errors: u64,
}

impl ServiceStats {
    pub fn to_fields(&self) -> Vec<Field> {
        vec![
            Field::u64(0, self.spans.recorded),
            Field::u64(1, self.spans.dropped),
            Field::u64(2, self.spans.shipped),
            Field::u64(3, self.shed),
            Field::u64(4, self.handled),
            Field::u64(5, self.errors),
        ]
    }

    pub fn from_fields(f: &[Field]) -> Result<Self, Fault> {
        Ok(ServiceStats {
            spans: SpanCounters {
                recorded: proto::req_u64(f, 0, "recorded")?,
                dropped: proto::req_u64(f, 1, "dropped")?,
                shipped: proto::req_u64(f, 2, "shipped")?,
            },
            shed: proto::req_u64(f, 3, "shed")?,
            handled: proto::req_u64(f, 4, "handled")?,
            errors: proto::req_u64(f, 5, "errors")?,
        })
    }
}

/// Per-process control state: span shipper, server counters, shutdown signal.
#[derive(Default)]
pub struct Control {
    pub shipper: Mutex<Option<SpanShipper>>,
    pub server_stats: OnceLock<Arc<ServerStats>>,
    pub shutdown: Mutex<Option<Sender<()>>>,
}

impl Control {
    pub fn stats(&self, tracer: &Tracer) -> ServiceStats {
        let s = self.server_stats.get();
        ServiceStats {
            spans: tracer.buffer().counters(),
            shed: s.map_or(0, |s| s.shed.load(Ordering::Relaxed)),
            handled: s.map_or(0, |s| s.handled.load(Ordering::Relaxed)),
            errors: s.map_or(0, |s| s.errors.load(Ordering::Relaxed)),
        }
    }

    pub fn flush(&self, timeout: Duration) -> bool {
        match &*self.shipper.lock() {
            Some(s) => s.flush(timeout),
            None => true,
        }
    }

    pub fn stop_shipper(&self, timeout: Duration) {
        if let Some(s) = self.shipper.lock().as_mut() {
            s.stop(timeout);
        }
    }

    /// Handles the admin methods common to all hosts. `set_slowdown` applies a
    /// factor to a named service (empty name = every service it hosts).
    pub fn admin(
        &self,
        req: &RpcMessage,
        tracer: &Tracer,
        set_slowdown: impl Fn(&str, f64) -> Result<(), Fault>,
    ) -> Option<Reply> {
        Some(match req.method.as_str() {
            methods::SET_SLOWDOWN => (|| {
                let name = std::str::from_utf8(proto::req_bytes(&req.fields, 0, "service")?)
                    .map_err(|_| proto::bad_request("service name"))?;
                let factor = f64::from_bits(proto::req_u64(&req.fields, 1, "factor")?);
                if !(factor > 0.0 && factor.is_finite()) {
                    return Err(proto::bad_request("factor must be > 0"));
                }
                set_slowdown(name, factor)?;
                Ok(vec![])
            })(),
            methods::SET_TRACING => {
                let on = proto::get_field(&req.fields, 0).is_some_and(|v| v.first() == Some(&1));
                tracer.set_enabled(on);
                Ok(vec![])
            }
            methods::FLUSH => Ok(vec![Field::new(0, vec![self.flush(Duration::from_secs(5)) as u8])]),
            methods::STATS => Ok(self.stats(tracer).to_fields()),
            methods::SHUTDOWN => {
                if let Some(tx) = self.shutdown.lock().as_ref() {
                    let _ = tx.try_send(());
                }
                Ok(vec![])
            }
            _ => return None,
        })
    }
}

pub fn slowdown_request(ctx: crate::wire::TraceContext, service: &str, factor: f64) -> RpcMessage {
    RpcMessage::request(
        ctx,
        methods::SET_SLOWDOWN,
        vec![Field::new(0, service.as_bytes().to_vec()), Field::u64(1, factor.to_bits())],
    )
}

pub const UNKNOWN_SERVICE: &str = "UnknownService";
