//! Process-local monotonic clock.
//!
//! Every timestamp in a span is nanoseconds since this process's epoch. Values
//! from different processes are never compared directly; durations are.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

static EPOCH: OnceLock<Instant> = OnceLock::new();

fn epoch() -> Instant {
    *EPOCH.get_or_init(Instant::now)
}

/// Nanoseconds elapsed since the process epoch.
#[inline]
pub fn now_ns() -> u64 {
    epoch().elapsed().as_nanos() as u64
}

/// Converts a process-clock timestamp back into an `Instant`.
pub fn instant_at(ns: u64) -> Instant {
    epoch() + Duration::from_nanos(ns)
}

/// Converts an `Instant` into a process-clock timestamp (saturating at the epoch).
pub fn ns_of(instant: Instant) -> u64 {
    instant.saturating_duration_since(epoch()).as_nanos() as u64
}
