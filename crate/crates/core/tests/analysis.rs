mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::oracle::{oracle_per_service, random_tree, span_count, spans_of};
use moviebench::analysis::{
    breakdown_csv, comm_compute_split, compare_loads, critical_path, parse_breakdown_csv, per_service,
    per_service_breakdown, AnalysisError, Breakdown, Category, Mode,
};
use moviebench::trace::{assemble, Span, SpanKind, SpanStatus, SpanTree};

fn span(id: u64, parent: u64, svc: &str, kind: SpanKind, t: (u64, u64), net: u64, app: u64) -> Span {
    Span {
        trace_id: 1,
        span_id: id,
        parent_span_id: parent,
        service: svc.into(),
        operation: "op".into(),
        kind,
        t_start: t.0,
        t_end: t.1,
        net_ns: net,
        app_ns: app,
        status: SpanStatus::Ok,
    }
}

fn one_tree(spans: Vec<Span>) -> SpanTree {
    let (mut trees, orphans) = assemble(spans);
    assert!(orphans.is_empty());
    assert_eq!(trees.len(), 1);
    trees.pop().unwrap()
}

fn totals(t: &SpanTree) -> BTreeMap<String, u64> {
    per_service(&critical_path(t).unwrap())
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[test]
fn serial_child_interior_plus_root_gaps() {
    let t = one_tree(vec![
        span(1, 0, "root", SpanKind::Server, (0, 10), 0, 10),
        span(2, 1, "root", SpanKind::Client, (2, 6), 0, 0),
        span(2, 1, "kid", SpanKind::Server, (100, 104), 0, 4),
    ]);
    let p = critical_path(&t).unwrap();
    assert_eq!(p.iter().map(|s| s.duration_ns).sum::<u64>(), 10);
    let m = totals(&t);
    assert_eq!(m["root"], 6);
    assert_eq!(m["kid"], 4);
}

#[test]
fn parallel_children_pick_the_later_one() {
    let t = one_tree(vec![
        span(1, 0, "root", SpanKind::Server, (0, 10), 0, 10),
        span(2, 1, "root", SpanKind::Client, (0, 5), 0, 0),
        span(2, 1, "early", SpanKind::Server, (0, 5), 0, 5),
        span(3, 1, "root", SpanKind::Client, (1, 8), 0, 0),
        span(3, 1, "late", SpanKind::Server, (50, 57), 0, 7),
    ]);
    let m = totals(&t);
    assert_eq!(m["root"], 3);
    assert_eq!(m["late"], 7);
    assert!(!m.contains_key("early"));
}

#[test]
fn transport_time_goes_to_the_callee_as_network() {
    let t = one_tree(vec![
        span(1, 0, "root", SpanKind::Server, (0, 10), 0, 10),
        span(2, 1, "root", SpanKind::Client, (2, 8), 0, 0),
        span(2, 1, "kid", SpanKind::Server, (0, 4), 1, 2),
    ]);
    let p = critical_path(&t).unwrap();
    let kid: Vec<_> = p.iter().filter(|s| &*s.service == "kid").collect();
    assert_eq!(kid[0].category, Category::Network);
    assert_eq!(kid[0].duration_ns, 2);
    assert_eq!(kid.iter().map(|s| s.duration_ns).sum::<u64>(), 6);
}

#[test]
fn random_trees_match_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000u128 {
        let g = random_tree(&mut rng, 12);
        assert!(span_count(&g) <= 12);
        let t = one_tree(spans_of(case + 1, &g));
        let segs = critical_path(&t).unwrap();
        assert_eq!(segs.iter().map(|s| s.duration_ns).sum::<u64>(), g.duration(), "case {case}");
        assert_eq!(totals(&t), oracle_per_service(&g), "case {case}: {g:#?}");
    }
}

#[test]
fn shuffled_traces_partition_by_trace_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut all = Vec::new();
    let mut expected = BTreeMap::new();
    for trace in 1..=1000u128 {
        let g = random_tree(&mut rng, 12);
        let spans = spans_of(trace, &g);
        expected.insert(trace, spans.len());
        all.extend(spans);
    }
    all.shuffle(&mut rng);
    let (trees, orphans) = assemble(all);
    assert!(orphans.is_empty());
    let got: BTreeMap<u128, usize> = trees.iter().map(|t| (t.trace_id(), t.len())).collect();
    assert_eq!(got, expected);
    for t in &trees {
        assert!(t.spans().iter().all(|s| s.trace_id == t.trace_id()));
    }
}

#[test]
fn missing_parent_is_an_orphan() {
    let (trees, orphans) = assemble(vec![
        span(1, 0, "a", SpanKind::Server, (0, 10), 0, 10),
        span(9, 42, "b", SpanKind::Server, (0, 1), 0, 1),
    ]);
    assert_eq!(trees.len(), 1);
    assert_eq!(orphans.len(), 1);
    assert_eq!(orphans[0].span_id, 9);
}

fn flat(trace: u128, svc: &str, dur: u64) -> SpanTree {
    let mut s = span(1, 0, svc, SpanKind::Server, (0, dur), 0, dur);
    s.trace_id = trace;
    SpanTree {
        root: moviebench::trace::SpanNode::leaf(s),
    }
}

#[test]
fn breakdown_examples() {
    let only_front = per_service_breakdown(&[flat(1, "frontend", 5), flat(2, "frontend", 9)], "x", Mode::CriticalPath)
        .unwrap();
    assert_eq!(only_front.fractions, BTreeMap::from([("frontend".to_string(), 1.0)]));
    let b = per_service_breakdown(&[flat(1, "A", 6), flat(2, "B", 4)], "low", Mode::CriticalPath).unwrap();
    assert!((b.fraction("A") - 0.6).abs() < 1e-12);
    assert!((b.fraction("B") - 0.4).abs() < 1e-12);
    assert!(matches!(per_service_breakdown(&[], "", Mode::CriticalPath), Err(AnalysisError::EmptyInput)));

    let csv = breakdown_csv(&b);
    assert_eq!(csv, breakdown_csv(&b));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "service,fraction,traces,load_label");
    assert_eq!(rows.len(), 3);
    assert_eq!(parse_breakdown_csv(&csv).unwrap(), b);
}

fn bd(pairs: &[(&str, f64)]) -> Breakdown {
    Breakdown {
        fractions: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        total_traces: 1,
        excluded_traces: 0,
        label: String::new(),
        mode: Mode::CriticalPath,
    }
}

#[test]
fn shift_report_flags_rising_services() {
    let same = compare_loads(&bd(&[("A", 0.7), ("B", 0.3)]), &bd(&[("A", 0.7), ("B", 0.3)])).unwrap();
    assert!(same.rows.iter().all(|r| r.delta == 0.0));
    assert!(same.inversions.is_empty());
    let r = compare_loads(&bd(&[("A", 0.7), ("B", 0.3)]), &bd(&[("A", 0.4), ("B", 0.6)])).unwrap();
    assert_eq!(r.rows[0].service, "B");
    assert!(r.rows[0].rising());
    assert_eq!(r.inversions, vec![("A".to_string(), "B".to_string())]);
    let err = compare_loads(&bd(&[("A", 1.0)]), &bd(&[("B", 1.0)])).unwrap_err();
    assert!(matches!(err, AnalysisError::ServiceSetMismatch { .. }));
}

#[test]
fn split_example() {
    let s = span(1, 0, "a", SpanKind::Server, (0, 10_000_000), 3_000_000, 6_000_000);
    let z = span(2, 0, "z", SpanKind::Server, (0, 10), 0, 4);
    let m = comm_compute_split([&s, &z]).unwrap();
    assert!((m["a"].network - 0.3).abs() < 1e-12);
    assert!((m["a"].compute - 0.6).abs() < 1e-12);
    assert!((m["a"].wait - 0.1).abs() < 1e-12);
    assert_eq!(m["z"].network, 0.0);
}

fn scaled(g: &common::oracle::GenServer, k: u64) -> Vec<Span> {
    spans_of(1, g)
        .into_iter()
        .map(|mut s| {
            s.t_start *= k;
            s.t_end *= k;
            s.net_ns *= k;
            s.app_ns *= k;
            s
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fractions_sum_to_one_and_ignore_scale(seed in any::<u64>(), k in 1u64..50) {
        let g = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), 12);
        prop_assume!(g.duration() > 0);
        let a = per_service_breakdown(&[one_tree(scaled(&g, 1))], "", Mode::CriticalPath).unwrap();
        let b = per_service_breakdown(&[one_tree(scaled(&g, k))], "", Mode::CriticalPath).unwrap();
        prop_assert!((a.fractions.values().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(a.fractions.len(), b.fractions.len());
        for (s, f) in &a.fractions {
            prop_assert!((f - b.fraction(s)).abs() < 1e-9);
        }
    }

    #[test]
    fn split_fractions_sum_to_one(seed in any::<u64>()) {
        let g = random_tree(&mut ChaCha8Rng::seed_from_u64(seed), 12);
        let spans = spans_of(1, &g);
        for (_, s) in comm_compute_split(&spans).unwrap() {
            prop_assert!((s.network + s.compute + s.wait - 1.0).abs() < 1e-9);
            prop_assert!(s.network >= 0.0 && s.compute >= 0.0 && s.wait >= -1e-12);
        }
    }
}
