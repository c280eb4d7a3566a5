//! CSV emission for breakdowns, splits and shift reports.
//!
//! Schemas (comment lines start with `#`):
//! - breakdown: `service,fraction,traces,load_label`
//! - split: `service,network_fraction,compute_fraction,wait_fraction,spans`
//! - shift: `service,low_fraction,high_fraction,delta,rising`

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::breakdown::{Breakdown, Mode, ShiftReport, Split};
use crate::loadgen::CsvError;

pub const BREAKDOWN_HEADER: &str = "service,fraction,traces,load_label";
pub const SPLIT_HEADER: &str = "service,network_fraction,compute_fraction,wait_fraction,spans";
pub const SHIFT_HEADER: &str = "service,low_fraction,high_fraction,delta,rising";

fn clean(label: &str) -> String {
    label.replace([',', '\n', '\r'], " ")
}

pub fn breakdown_csv(b: &Breakdown) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# mode={}", b.mode.name());
    let _ = writeln!(out, "# excluded_traces={}", b.excluded_traces);
    out.push_str(BREAKDOWN_HEADER);
    out.push('\n');
    let label = clean(&b.label);
    for (s, f) in &b.fractions {
        let _ = writeln!(out, "{s},{f},{},{label}", b.total_traces);
    }
    out
}

pub fn parse_breakdown_csv(text: &str) -> Result<Breakdown, CsvError> {
    let mut b = Breakdown {
        fractions: BTreeMap::new(),
        total_traces: 0,
        excluded_traces: 0,
        label: String::new(),
        mode: Mode::CriticalPath,
    };
    let mut header = false;
    for (i, line) in text.lines().enumerate() {
        let err = |reason: String| CsvError::Parse { line: i + 1, reason };
        let line = line.trim();
        if let Some(c) = line.strip_prefix('#') {
            match c.trim().split_once('=') {
                Some(("excluded_traces", v)) => {
                    b.excluded_traces = v.parse().map_err(|_| err("excluded_traces".into()))?
                }
                Some(("mode", "total_time")) => b.mode = Mode::TotalTime,
                _ => {}
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if !header {
            if line != BREAKDOWN_HEADER {
                return Err(err(format!("unexpected header {line:?}")));
            }
            header = true;
            continue;
        }
        let c: Vec<&str> = line.splitn(4, ',').collect();
        if c.len() != 4 {
            return Err(err("expected 4 columns".into()));
        }
        let f: f64 = c[1].parse().map_err(|_| err("fraction".into()))?;
        b.total_traces = c[2].parse().map_err(|_| err("traces".into()))?;
        b.label = c[3].to_owned();
        b.fractions.insert(c[0].to_owned(), f);
    }
    Ok(b)
}

pub fn split_csv(s: &BTreeMap<String, Split>) -> String {
    let mut out = String::from(SPLIT_HEADER);
    out.push('\n');
    for (k, v) in s {
        let _ = writeln!(out, "{k},{},{},{},{}", v.network, v.compute, v.wait, v.spans);
    }
    out
}

pub fn shift_csv(r: &ShiftReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# low_label={}", clean(&r.low.label));
    let _ = writeln!(out, "# high_label={}", clean(&r.high.label));
    for (a, b) in &r.inversions {
        let _ = writeln!(out, "# inversion {a} {b}");
    }
    out.push_str(SHIFT_HEADER);
    out.push('\n');
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.service,
            row.low,
            row.high,
            row.delta,
            row.rising() as u8
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_schema_and_round_trip() {
        let b = Breakdown {
            fractions: [("A".to_string(), 0.6), ("B".to_string(), 0.4)].into(),
            total_traces: 2,
            excluded_traces: 1,
            label: "low".into(),
            mode: Mode::CriticalPath,
        };
        let text = breakdown_csv(&b);
        assert_eq!(text, breakdown_csv(&b));
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data[0], BREAKDOWN_HEADER);
        assert_eq!(data.len(), 3);
        assert_eq!(parse_breakdown_csv(&text).unwrap(), b);
    }
}
