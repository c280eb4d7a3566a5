//! Rate sweeps and saturation-knee detection.

use std::net::SocketAddr;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::run::{run_load, LoadConfig, LoadError, RunResult};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub rates: Vec<f64>,
    pub repeats: usize,
    pub cooldown: Duration,
}

impl SweepOptions {
    pub fn new(rates: Vec<f64>) -> Self {
        SweepOptions {
            rates,
            repeats: 1,
            cooldown: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("rates must be strictly increasing")]
    RatesNotIncreasing,
    #[error("at least one rate and one repeat are required")]
    Empty,
    #[error("run at {rate} QPS failed: {source}")]
    Run { rate: f64, source: LoadError },
}

/// One offered rate, summarized over its repeats.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub offered_rate: f64,
    /// Median over repeats.
    pub achieved_rate: f64,
    pub p50_ns: u64,
    pub p90_ns: u64,
    /// Median of the per-repeat p99 values.
    pub p99_ns: u64,
    /// 10th and 90th percentile of the per-repeat p99 values.
    pub p99_lo_ns: u64,
    pub p99_hi_ns: u64,
    pub errors: u64,
    pub timeouts: u64,
    pub shed: u64,
    pub runs: Vec<RunResult>,
}

impl SweepPoint {
    pub fn from_runs(offered_rate: f64, runs: Vec<RunResult>) -> Self {
        let med = |f: &dyn Fn(&RunResult) -> u64| {
            let mut v: Vec<u64> = runs.iter().map(f).collect();
            v.sort_unstable();
            v[(v.len() - 1) / 2]
        };
        let mut p99s: Vec<u64> = runs.iter().map(|r| r.p(0.99)).collect();
        p99s.sort_unstable();
        let mut ach: Vec<f64> = runs.iter().map(|r| r.achieved_rate).collect();
        ach.sort_by(f64::total_cmp);
        SweepPoint {
            offered_rate,
            achieved_rate: ach[(ach.len() - 1) / 2],
            p50_ns: med(&|r| r.p(0.5)),
            p90_ns: med(&|r| r.p(0.9)),
            p99_ns: p99s[(p99s.len() - 1) / 2],
            p99_lo_ns: nearest_rank(&p99s, 0.1),
            p99_hi_ns: nearest_rank(&p99s, 0.9),
            errors: runs.iter().map(|r| r.errors).sum(),
            timeouts: runs.iter().map(|r| r.timeouts).sum(),
            shed: runs.iter().map(|r| r.shed).sum(),
            runs,
        }
    }
}

/// Nearest-rank quantile of an ascending slice.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[derive(Debug, Clone, Default)]
pub struct SweepCurve {
    pub points: Vec<SweepPoint>,
}

/// Runs `cfg` at every rate, `repeats` times each, cooling down between runs.
/// Each repeat uses a different seed.
pub fn sweep(entry: SocketAddr, cfg: &LoadConfig, opts: &SweepOptions) -> Result<SweepCurve, SweepError> {
    if opts.rates.is_empty() || opts.repeats == 0 {
        return Err(SweepError::Empty);
    }
    if opts.rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SweepError::RatesNotIncreasing);
    }
    let mut curve = SweepCurve::default();
    let mut first = true;
    for &rate in &opts.rates {
        let mut runs = Vec::with_capacity(opts.repeats);
        for r in 0..opts.repeats {
            if !first {
                thread::sleep(opts.cooldown);
            }
            first = false;
            let run_cfg = LoadConfig {
                rate,
                seed: cfg.seed.wrapping_add(r as u64),
                ..cfg.clone()
            };
            let res = run_load(entry, &run_cfg).map_err(|source| SweepError::Run { rate, source })?;
            log::info!(
                "rate {rate}: achieved {:.1} p99 {:.2} ms errors {} timeouts {} shed {}",
                res.achieved_rate,
                res.p(0.99) as f64 / 1e6,
                res.errors,
                res.timeouts,
                res.shed
            );
            runs.push(res);
        }
        curve.points.push(SweepPoint::from_runs(rate, runs));
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KneeThresholds {
    /// Saturated once achieved < this × offered.
    pub throughput_ratio: f64,
    /// Saturated once p99 > this × the p99 at the lowest rate.
    pub p99_factor: f64,
}

impl Default for KneeThresholds {
    fn default() -> Self {
        KneeThresholds {
            throughput_ratio: 0.95,
            p99_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KneeError {
    #[error("a curve needs at least 2 points, got {0}")]
    CurveTooShort(usize),
}

/// The smallest offered rate where the curve saturates, if any.
pub fn find_knee_by(
    points: &[(f64, f64, u64)],
    th: KneeThresholds,
) -> Result<Option<f64>, KneeError> {
    if points.len() < 2 {
        return Err(KneeError::CurveTooShort(points.len()));
    }
    let base = points[0].2 as f64;
    Ok(points
        .iter()
        .find(|(offered, achieved, p99)| {
            *achieved < th.throughput_ratio * offered || *p99 as f64 > th.p99_factor * base
        })
        .map(|p| p.0))
}

pub fn find_knee(curve: &SweepCurve, th: KneeThresholds) -> Result<Option<f64>, KneeError> {
    let pts: Vec<(f64, f64, u64)> = curve
        .points
        .iter()
        .map(|p| (p.offered_rate, p.achieved_rate, p.p99_ns))
        .collect();
    find_knee_by(&pts, th)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knee_rules() {
        let th = KneeThresholds::default();
        let flat: Vec<_> = (1..=6).map(|i| (i as f64 * 10.0, i as f64 * 10.0, 1_000)).collect();
        assert_eq!(find_knee_by(&flat, th), Ok(None));
        let mut sat = flat.clone();
        sat[3].1 = 30.0;
        sat[4].1 = 35.0;
        assert_eq!(find_knee_by(&sat, th), Ok(Some(40.0)));
        let mut tail = flat.clone();
        tail[2].2 = 10_001;
        assert_eq!(find_knee_by(&tail, th), Ok(Some(30.0)));
        assert_eq!(find_knee_by(&flat[..1], th), Err(KneeError::CurveTooShort(1)));
    }

    #[test]
    fn whiskers_use_nearest_rank() {
        let v: Vec<u64> = (1..=10).collect();
        assert_eq!(nearest_rank(&v, 0.1), 1);
        assert_eq!(nearest_rank(&v, 0.9), 9);
        assert_eq!(nearest_rank(&[7], 0.9), 7);
    }
}
