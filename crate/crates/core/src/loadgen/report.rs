//! CSV form of runs and sweep curves.
//!
//! Columns: `offered_qps,achieved_qps,p50_us,p90_us,p99_us,p99_whisker_lo_us,
//! p99_whisker_hi_us,errors,timeouts,shed`. Lines starting with `#` are
//! comments and are skipped on read.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::sweep::{KneeThresholds, SweepCurve};

pub const CURVE_HEADER: &str =
    "offered_qps,achieved_qps,p50_us,p90_us,p99_us,p99_whisker_lo_us,p99_whisker_hi_us,errors,timeouts,shed";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One data row as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub offered_qps: f64,
    pub achieved_qps: f64,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub p99_whisker_lo_us: f64,
    pub p99_whisker_hi_us: f64,
    pub errors: u64,
    pub timeouts: u64,
    pub shed: u64,
}

fn us(ns: u64) -> f64 {
    ns as f64 / 1e3
}

pub fn curve_rows(c: &SweepCurve) -> Vec<CurveRow> {
    c.points
        .iter()
        .map(|p| CurveRow {
            offered_qps: p.offered_rate,
            achieved_qps: p.achieved_rate,
            p50_us: us(p.p50_ns),
            p90_us: us(p.p90_ns),
            p99_us: us(p.p99_ns),
            p99_whisker_lo_us: us(p.p99_lo_ns),
            p99_whisker_hi_us: us(p.p99_hi_ns),
            errors: p.errors,
            timeouts: p.timeouts,
            shed: p.shed,
        })
        .collect()
}

/// Renders the CSV, with knee thresholds and the detected knee as comments.
pub fn curve_csv(c: &SweepCurve, th: KneeThresholds, knee: Option<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# knee_throughput_ratio={}", th.throughput_ratio);
    let _ = writeln!(out, "# knee_p99_factor={}", th.p99_factor);
    match knee {
        Some(k) => {
            let _ = writeln!(out, "# knee_qps={k}");
        }
        None => out.push_str("# knee_qps=none\n"),
    }
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for r in curve_rows(c) {
        let _ = writeln!(
            out,
            "{},{:.3},{:.1},{:.1},{:.1},{:.1},{:.1},{},{},{}",
            r.offered_qps,
            r.achieved_qps,
            r.p50_us,
            r.p90_us,
            r.p99_us,
            r.p99_whisker_lo_us,
            r.p99_whisker_hi_us,
            r.errors,
            r.timeouts,
            r.shed
        );
    }
    out
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>, CsvError> {
    let mut rows = Vec::new();
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| CsvError::Parse { line: i + 1, reason };
        if !header {
            if line != CURVE_HEADER {
                return Err(err(format!("unexpected header {line:?}")));
            }
            header = true;
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 10 {
            return Err(err(format!("expected 10 columns, got {}", c.len())));
        }
        let f = |j: usize| c[j].parse::<f64>().map_err(|_| err(format!("column {}", j + 1)));
        let n = |j: usize| c[j].parse::<u64>().map_err(|_| err(format!("column {}", j + 1)));
        rows.push(CurveRow {
            offered_qps: f(0)?,
            achieved_qps: f(1)?,
            p50_us: f(2)?,
            p90_us: f(3)?,
            p99_us: f(4)?,
            p99_whisker_lo_us: f(5)?,
            p99_whisker_hi_us: f(6)?,
            errors: n(7)?,
            timeouts: n(8)?,
            shed: n(9)?,
        });
    }
    Ok(rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CsvError> {
    std::fs::write(path, text).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loadgen::histogram::LatencyHistogram;
    use crate::loadgen::run::RunResult;
    use crate::loadgen::sweep::SweepPoint;
    use std::time::Duration;

    fn run(rate: f64, p99_ms: u64) -> RunResult {
        let mut h = LatencyHistogram::new();
        for _ in 0..100 {
            h.record(p99_ms * 1_000_000);
        }
        RunResult {
            offered_rate: rate,
            achieved_rate: rate,
            duration: Duration::from_secs(1),
            scheduled: 100,
            ok: 100,
            errors: 0,
            timeouts: 0,
            shed: 0,
            latency: h,
            per_kind: Default::default(),
            scheduler_lag_p99_ns: 0,
            scheduler_lag_max_ns: 0,
            valid: true,
            entry_rpcs_ok: 100,
            entry_rpcs_unanswered: 0,
        }
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let curve = SweepCurve {
            points: (1..=6)
                .map(|i| SweepPoint::from_runs(i as f64 * 10.0, vec![run(i as f64 * 10.0, i)]))
                .collect(),
        };
        let a = curve_csv(&curve, KneeThresholds::default(), None);
        assert_eq!(a, curve_csv(&curve, KneeThresholds::default(), None));
        let rows = parse_curve_csv(&a).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[2].offered_qps, 30.0);
        assert!((rows[2].p99_us - 3000.0).abs() < 30.0);
        assert!(parse_curve_csv("bad,header\n").is_err());
    }
}
