//! Random inputs shared by the property tests and the acceptance suite.

use rand::seq::SliceRandom;
use rand::Rng;

use moviebench::wire::{Field, MessageKind, RpcMessage, TraceContext, MAX_METHOD_LEN};

const METHOD_CHARS: &[char] = &['a', 'Z', '0', '_', 'é', 'ß', '語', '🎬'];

fn method(rng: &mut impl Rng, min: usize) -> String {
    let target = if rng.gen_bool(0.05) {
        MAX_METHOD_LEN
    } else {
        rng.gen_range(min..=40)
    };
    let mut s = String::new();
    loop {
        let c = *METHOD_CHARS.choose(rng).unwrap();
        if s.len() + c.len_utf8() > target {
            break;
        }
        s.push(c);
    }
    if s.len() < min {
        s.push('m');
    }
    s
}

/// Any message the encoder accepts.
pub fn message(rng: &mut impl Rng) -> RpcMessage {
    let kind = *[MessageKind::Request, MessageKind::Response, MessageKind::Error]
        .choose(rng)
        .unwrap();
    let context = TraceContext {
        trace_id: rng.gen_range(1..=u128::MAX),
        span_id: rng.gen_range(1..=u64::MAX),
        parent_span_id: if rng.gen_bool(0.3) { 0 } else { rng.gen() },
    };
    let method = match kind {
        MessageKind::Request => method(rng, 1),
        _ if rng.gen_bool(0.5) => String::new(),
        _ => method(rng, 0),
    };
    let mut tags: Vec<u8> = (0..=255).collect();
    tags.shuffle(rng);
    let n = rng.gen_range(0..8);
    let fields = tags[..n]
        .iter()
        .map(|&tag| {
            let len = if rng.gen_bool(0.1) { rng.gen_range(1000..5000) } else { rng.gen_range(0..64) };
            Field::new(tag, (0..len).map(|_| rng.gen()).collect::<Vec<u8>>())
        })
        .collect();
    RpcMessage {
        kind,
        context,
        method,
        fields,
    }
}

/// Mutates a valid frame: flips, overwrites, truncation, extension, or a
/// rewritten length prefix.
pub fn mutate(rng: &mut impl Rng, frame: &mut Vec<u8>) {
    for _ in 0..rng.gen_range(1..4) {
        match rng.gen_range(0..5) {
            0 => {
                let i = rng.gen_range(0..frame.len());
                frame[i] ^= 1 << rng.gen_range(0..8);
            }
            1 => {
                let i = rng.gen_range(0..frame.len());
                frame[i] = rng.gen();
            }
            2 => frame.truncate(rng.gen_range(0..frame.len())),
            3 => frame.extend((0..rng.gen_range(1..8)).map(|_| rng.gen::<u8>())),
            _ => {
                if frame.len() >= 4 {
                    let len: u32 = rng.gen_range(0..(frame.len() as u32 + 16));
                    frame[..4].copy_from_slice(&len.to_be_bytes());
                }
            }
        }
        if frame.is_empty() {
            frame.push(rng.gen());
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LatencyDist {
    Uniform,
    LogNormal,
    Bimodal,
}

pub const LATENCY_DISTS: [LatencyDist; 3] = [LatencyDist::Uniform, LatencyDist::LogNormal, LatencyDist::Bimodal];

/// Latency samples in ns.
pub fn latency_samples(dist: LatencyDist, n: usize, seed: u64) -> Vec<u64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, LogNormal, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ln = LogNormal::new((1e6f64).ln(), 1.0).unwrap();
    let fast = Normal::new(1e6, 1e5).unwrap();
    let slow = Normal::new(5e7, 5e6).unwrap();
    (0..n)
        .map(|_| {
            let v: f64 = match dist {
                LatencyDist::Uniform => rng.gen_range(1e3..1e8),
                LatencyDist::LogNormal => ln.sample(&mut rng),
                LatencyDist::Bimodal if rng.gen_bool(0.9) => fast.sample(&mut rng),
                LatencyDist::Bimodal => slow.sample(&mut rng),
            };
            v.clamp(1e3, 1e11) as u64
        })
        .collect()
}

/// Nearest-rank percentile over sorted samples.
pub fn exact_percentile(sorted: &[u64], q: f64) -> u64 {
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank - 1]
}
