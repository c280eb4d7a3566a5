//! Synthetic CPU work standing in for request processing.
//!
//! The work is a mixing digest over the payload, after which the worker is
//! held until `len * cost / slowdown` nanoseconds of wall time have passed.
//! Long holds sleep and only the final stretch spins, so each worker behaves
//! like it owns a core of the configured speed even when the host has fewer
//! cores than the deployment has workers.

use std::hint::black_box;
use std::time::{Duration, Instant};

const YIELD_EVERY: Duration = Duration::from_micros(20);
/// Holds longer than this sleep for all but the last `SPIN_TAIL`.
const SLEEP_ABOVE: Duration = Duration::from_micros(200);
const SPIN_TAIL: Duration = Duration::from_micros(100);

#[inline]
fn mix(mut h: u64, v: u64) -> u64 {
    h ^= v;
    h = h.wrapping_mul(0x100_0000_01B3);
    h ^ (h >> 29)
}

/// Deterministic digest of `payload`.
pub fn digest(payload: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64 ^ payload.len() as u64;
    let mut chunks = payload.chunks_exact(8);
    for c in &mut chunks {
        h = mix(h, u64::from_le_bytes(c.try_into().unwrap()));
    }
    for &b in chunks.remainder() {
        h = mix(h, b as u64);
    }
    h
}

/// Wall time the work should take.
pub fn compute_duration(len: usize, cost_ns_per_byte: f64, slowdown: f64) -> Duration {
    if len == 0 || cost_ns_per_byte <= 0.0 {
        return Duration::ZERO;
    }
    let ns = len as f64 * cost_ns_per_byte / slowdown.max(1e-9);
    Duration::from_nanos(ns.min(1e12) as u64)
}

/// Digests `payload` and keeps mixing until the target duration has elapsed.
/// The result depends only on the payload.
pub fn synthetic_compute(payload: &[u8], cost_ns_per_byte: f64, slowdown: f64) -> u64 {
    let start = Instant::now();
    let h = digest(payload);
    burn(start, compute_duration(payload.len(), cost_ns_per_byte, slowdown), h);
    h
}

/// Same as [`synthetic_compute`] for a payload of `len` bytes that is not materialized.
pub fn synthetic_compute_len(len: usize, seed: u64, cost_ns_per_byte: f64, slowdown: f64) -> u64 {
    let start = Instant::now();
    let h = mix(seed, len as u64);
    burn(start, compute_duration(len, cost_ns_per_byte, slowdown), h);
    h
}

fn burn(start: Instant, target: Duration, seed: u64) {
    if target.is_zero() {
        return;
    }
    let elapsed = start.elapsed();
    if target > elapsed + SLEEP_ABOVE {
        std::thread::sleep(target - elapsed - SPIN_TAIL);
    }
    let mut h = seed;
    let mut last_yield = Instant::now();
    loop {
        for i in 0..64u64 {
            h = mix(h, i);
        }
        black_box(h);
        let now = Instant::now();
        if now.duration_since(start) >= target {
            break;
        }
        if now.duration_since(last_yield) >= YIELD_EVERY {
            std::thread::yield_now();
            last_yield = Instant::now();
        }
    }
}
