//! Per-RPC span recording, shipping, collection, and trace assembly.

mod assemble;
mod buffer;
mod collector;
mod log;
mod shipper;
mod span;

pub use assemble::{assemble, SpanNode, SpanTree};
pub use buffer::{SpanBuffer, SpanCounters, Tracer, DEFAULT_BUFFER_CAPACITY};
pub use collector::{Collector, CollectorError, SPAN_BATCH_METHOD};
pub use log::{load_span_log, parse_span_lines, write_span_log, LoadedSpans, MalformedLine};
pub use shipper::{ShipperConfig, SpanShipper};
pub use span::{ParseSpanError, Span, SpanError, SpanKind, SpanStatus};

/// Niceness of span shipping and collection threads. Spans are buffered, so
/// these threads can yield to request handling; the value stays moderate so
/// that they still drain under saturation.
const BACKGROUND_NICE: i32 = 10;

/// Lowers the scheduling priority of the calling thread. Best effort.
pub(crate) fn lower_thread_priority() {
    #[cfg(target_os = "linux")]
    // SAFETY: plain syscalls on the calling thread's id.
    unsafe {
        let tid = libc::gettid();
        libc::setpriority(libc::PRIO_PROCESS, tid as libc::id_t, BACKGROUND_NICE);
    }
}
