//! Per-service latency attribution across many traces.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use super::critical_path::{critical_path, PathError};
use crate::trace::{assemble, Span, SpanKind, SpanTree};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("no traces to analyze")]
    EmptyInput,
    #[error("service sets differ: only in low {only_low:?}, only in high {only_high:?}")]
    ServiceSetMismatch {
        only_low: Vec<String>,
        only_high: Vec<String>,
    },
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Time on each trace's critical path.
    #[default]
    CriticalPath,
    /// Total server-span time per service, overlapping or not.
    TotalTime,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::CriticalPath => "critical_path",
            Mode::TotalTime => "total_time",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Breakdown {
    /// Service → share of the attributed time; sums to 1.
    pub fractions: BTreeMap<String, f64>,
    pub total_traces: usize,
    /// Incomplete traces left out.
    pub excluded_traces: usize,
    pub label: String,
    pub mode: Mode,
}

impl Breakdown {
    pub fn fraction(&self, service: &str) -> f64 {
        self.fractions.get(service).copied().unwrap_or(0.0)
    }

    /// Service with the largest share; ties go to the smaller name.
    pub fn top(&self) -> Option<(&str, f64)> {
        self.fractions
            .iter()
            .fold(None, |best: Option<(&str, f64)>, (k, &v)| match best {
                Some((_, b)) if b >= v => best,
                _ => Some((k.as_str(), v)),
            })
    }
}

/// True when every call in the tree has its server side and the root is a
/// server span.
pub fn is_complete(tree: &SpanTree) -> bool {
    if tree.root_server().is_none() {
        return false;
    }
    let mut ok = true;
    tree.root.walk(&mut |n| {
        if n.span.kind == SpanKind::Client && n.matched_server().is_none() {
            ok = false;
        }
        // A server span hanging directly under another server span lost its
        // client side.
        if n.span.kind == SpanKind::Server
            && n.children
                .iter()
                .any(|c| c.span.kind == SpanKind::Server)
        {
            ok = false;
        }
    });
    ok
}

/// Complete trees, plus how many traces were left out (incomplete trees and
/// traces that only produced orphans).
pub fn complete_trees(trees: Vec<SpanTree>, orphans: &[Span]) -> (Vec<SpanTree>, usize) {
    let orphan_traces: HashSet<u128> = orphans.iter().map(|s| s.trace_id).collect();
    let mut excluded: HashSet<u128> = orphan_traces.clone();
    let mut kept = Vec::new();
    for t in trees {
        if is_complete(&t) && !orphan_traces.contains(&t.trace_id()) {
            kept.push(t);
        } else {
            excluded.insert(t.trace_id());
        }
    }
    (kept, excluded.len())
}

/// Keeps trees whose root server span handled one of `operations`.
pub fn with_root_operation(trees: Vec<SpanTree>, operations: &[&str]) -> Vec<SpanTree> {
    trees
        .into_iter()
        .filter(|t| {
            t.root_server()
                .is_some_and(|r| operations.contains(&&*r.span.operation))
        })
        .collect()
}

fn normalize(totals: BTreeMap<String, u128>) -> BTreeMap<String, f64> {
    let grand: u128 = totals.values().sum();
    totals
        .into_iter()
        .map(|(k, v)| (k, if grand == 0 { 0.0 } else { v as f64 / grand as f64 }))
        .collect()
}

/// Attribution over `trees`, which should already be complete.
pub fn per_service_breakdown(trees: &[SpanTree], label: &str, mode: Mode) -> Result<Breakdown, AnalysisError> {
    if trees.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut totals: BTreeMap<String, u128> = BTreeMap::new();
    for t in trees {
        match mode {
            Mode::CriticalPath => {
                for seg in critical_path(t)? {
                    *totals.entry(seg.service.to_string()).or_default() += seg.duration_ns as u128;
                }
            }
            Mode::TotalTime => {
                for s in t.spans() {
                    if s.kind == SpanKind::Server {
                        *totals.entry(s.service.to_string()).or_default() += s.duration() as u128;
                    }
                }
            }
        }
    }
    Ok(Breakdown {
        fractions: normalize(totals),
        total_traces: trees.len(),
        excluded_traces: 0,
        label: label.to_owned(),
        mode,
    })
}

/// Assemble, drop incomplete traces, optionally keep only given root
/// operations, then attribute.
pub fn breakdown_from_spans(
    spans: Vec<Span>,
    label: &str,
    mode: Mode,
    operations: Option<&[&str]>,
) -> Result<Breakdown, AnalysisError> {
    let (trees, orphans) = assemble(spans);
    let trees = match operations {
        Some(ops) => with_root_operation(trees, ops),
        None => trees,
    };
    let (kept, excluded) = complete_trees(trees, &orphans);
    let mut b = per_service_breakdown(&kept, label, mode)?;
    b.excluded_traces = excluded;
    Ok(b)
}

/// Per-service network / handler / queueing shares over all server spans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub network: f64,
    pub compute: f64,
    pub wait: f64,
    pub spans: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Acc {
    net: u128,
    app: u128,
    dur: u128,
    spans: u64,
}

impl Acc {
    fn add(&mut self, s: &Span) {
        self.net += s.net_ns as u128;
        self.app += s.app_ns as u128;
        self.dur += s.duration() as u128;
        self.spans += 1;
    }

    fn split(&self) -> Split {
        if self.dur == 0 {
            return Split {
                network: 0.0,
                compute: 1.0,
                wait: 0.0,
                spans: self.spans,
            };
        }
        let d = self.dur as f64;
        let network = self.net as f64 / d;
        let compute = self.app as f64 / d;
        Split {
            network,
            compute,
            wait: 1.0 - network - compute,
            spans: self.spans,
        }
    }
}

/// Split per service over `spans` (server spans only).
pub fn comm_compute_split<'a>(
    spans: impl IntoIterator<Item = &'a Span>,
) -> Result<BTreeMap<String, Split>, AnalysisError> {
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for s in spans {
        if s.kind == SpanKind::Server {
            acc.entry(s.service.to_string()).or_default().add(s);
        }
    }
    if acc.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    Ok(acc.into_iter().map(|(k, a)| (k, a.split())).collect())
}

/// Network share of processing time, `Σ net_ns / Σ (net_ns + app_ns)`, over
/// every server span of every service together. Waiting (queueing, or blocked
/// on children) is left out, so nested spans do not count the same interval
/// once per level. Spans with no processing time at all give 0.
pub fn aggregate_network_fraction<'a>(spans: impl IntoIterator<Item = &'a Span>) -> Result<f64, AnalysisError> {
    let mut a = Acc::default();
    for s in spans {
        if s.kind == SpanKind::Server {
            a.add(s);
        }
    }
    if a.spans == 0 {
        return Err(AnalysisError::EmptyInput);
    }
    let busy = a.net + a.app;
    Ok(if busy == 0 { 0.0 } else { a.net as f64 / busy as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub service: String,
    pub low: f64,
    pub high: f64,
    pub delta: f64,
}

impl ShiftRow {
    pub fn rising(&self) -> bool {
        self.delta > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftReport {
    /// Ordered by delta, largest increase first; ties by name.
    pub rows: Vec<ShiftRow>,
    /// Pairs (a, b) with a ahead of b at low load and behind it at high load.
    pub inversions: Vec<(String, String)>,
    pub low: Breakdown,
    pub high: Breakdown,
}

pub fn compare_loads(low: &Breakdown, high: &Breakdown) -> Result<ShiftReport, AnalysisError> {
    let a: BTreeSet<&String> = low.fractions.keys().collect();
    let b: BTreeSet<&String> = high.fractions.keys().collect();
    if a != b {
        return Err(AnalysisError::ServiceSetMismatch {
            only_low: a.difference(&b).map(|s| s.to_string()).collect(),
            only_high: b.difference(&a).map(|s| s.to_string()).collect(),
        });
    }
    let mut rows: Vec<ShiftRow> = low
        .fractions
        .iter()
        .map(|(k, &l)| {
            let h = high.fractions[k];
            ShiftRow {
                service: k.clone(),
                low: l,
                high: h,
                delta: h - l,
            }
        })
        .collect();
    rows.sort_by(|x, y| y.delta.total_cmp(&x.delta).then(x.service.cmp(&y.service)));
    let mut inversions = Vec::new();
    let names: Vec<&String> = low.fractions.keys().collect();
    for x in &names {
        for y in &names {
            if low.fractions[*x] > low.fractions[*y] && high.fractions[*x] < high.fractions[*y] {
                inversions.push(((*x).clone(), (*y).clone()));
            }
        }
    }
    Ok(ShiftReport {
        rows,
        inversions,
        low: low.clone(),
        high: high.clone(),
    })
}
