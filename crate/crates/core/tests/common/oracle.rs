//! Random span trees and an exhaustive-search critical-path oracle.
//!
//! The generator keeps its own tree structure so the oracle never looks at
//! the library's assembled trees.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use rand::Rng;

use moviebench::trace::{Span, SpanKind, SpanStatus};

const SERVICES: &[&str] = &["a", "b", "c", "d"];
const MAX_CALLS: usize = 6;

#[derive(Debug, Clone)]
pub struct GenServer {
    pub id: u64,
    pub parent: u64,
    pub service: &'static str,
    pub t0: u64,
    pub t1: u64,
    pub net: u64,
    pub app: u64,
    pub calls: Vec<GenCall>,
}

#[derive(Debug, Clone)]
pub struct GenCall {
    pub id: u64,
    pub t0: u64,
    pub t1: u64,
    pub server: Option<GenServer>,
}

impl GenServer {
    pub fn duration(&self) -> u64 {
        self.t1 - self.t0
    }
}

struct Builder<'r, R> {
    rng: &'r mut R,
    next_id: u64,
    budget: usize,
}

impl<R: Rng> Builder<'_, R> {
    fn server(&mut self, id: u64, parent: u64, t0: u64, dur: u64) -> GenServer {
        let net = self.rng.gen_range(0..=dur);
        let app = self.rng.gen_range(0..=dur - net);
        let mut s = GenServer {
            id,
            parent,
            service: SERVICES[self.rng.gen_range(0..SERVICES.len())],
            t0,
            t1: t0 + dur,
            net,
            app,
            calls: Vec::new(),
        };
        let want = self.rng.gen_range(0..=MAX_CALLS.min(self.budget));
        let mut serial_at = t0;
        for _ in 0..want {
            if self.budget == 0 {
                break;
            }
            self.budget -= 1;
            // Serial calls follow each other; parallel ones land anywhere.
            let (c0, c1) = if self.rng.gen_bool(0.5) && serial_at < s.t1 {
                let c0 = self.rng.gen_range(serial_at..=s.t1);
                (c0, self.rng.gen_range(c0..=s.t1))
            } else {
                let c0 = self.rng.gen_range(t0..=s.t1);
                (c0, self.rng.gen_range(c0..=s.t1))
            };
            serial_at = c1;
            self.next_id += 1;
            let cid = self.next_id;
            let matched = self.budget > 0 && self.rng.gen_bool(0.85);
            let server = matched.then(|| {
                self.budget -= 1;
                let len = c1 - c0;
                let d = if self.rng.gen_bool(0.1) {
                    len + self.rng.gen_range(1..5)
                } else {
                    len - self.rng.gen_range(0..=len)
                };
                // The callee runs on its own clock.
                let origin = self.rng.gen_range(0..10_000);
                self.server(cid, id, origin, d)
            });
            s.calls.push(GenCall {
                id: cid,
                t0: c0,
                t1: c1,
                server,
            });
        }
        s
    }
}

/// A random trace of at most `max_spans` spans rooted at a server span.
pub fn random_tree(rng: &mut impl Rng, max_spans: usize) -> GenServer {
    let dur = rng.gen_range(0..100);
    let t0 = rng.gen_range(0..1000);
    let mut b = Builder {
        rng,
        next_id: 1,
        budget: max_spans - 1,
    };
    b.server(1, 0, t0, dur)
}

fn span(trace: u128, id: u64, parent: u64, service: &str, kind: SpanKind, t: (u64, u64), net: u64, app: u64) -> Span {
    Span {
        trace_id: trace,
        span_id: id,
        parent_span_id: parent,
        service: service.into(),
        operation: "op".into(),
        kind,
        t_start: t.0,
        t_end: t.1,
        net_ns: net,
        app_ns: app,
        status: SpanStatus::Ok,
    }
}

/// Flattens the tree into the spans services would have recorded.
pub fn spans_of(trace: u128, root: &GenServer) -> Vec<Span> {
    let mut out = Vec::new();
    fn walk(trace: u128, s: &GenServer, out: &mut Vec<Span>) {
        out.push(span(trace, s.id, s.parent, s.service, SpanKind::Server, (s.t0, s.t1), s.net, s.app));
        for c in &s.calls {
            out.push(span(trace, c.id, s.id, s.service, SpanKind::Client, (c.t0, c.t1), 0, 0));
            if let Some(srv) = &c.server {
                walk(trace, srv, out);
            }
        }
    }
    walk(trace, root, &mut out);
    out
}

pub fn span_count(root: &GenServer) -> usize {
    1 + root
        .calls
        .iter()
        .map(|c| 1 + c.server.as_ref().map_or(0, span_count))
        .sum::<usize>()
}

type Key = (u64, Reverse<u64>, Reverse<u64>);

fn key(c: &GenCall) -> Key {
    (c.t1, Reverse(c.t0), Reverse(c.id))
}

/// Every maximal chain of calls walking backwards from `cursor`, as index lists.
fn maximal_chains(calls: &[&GenCall], cursor: u64, used: &mut Vec<bool>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let mut extended = false;
    for i in 0..calls.len() {
        if used[i] || calls[i].t1 > cursor {
            continue;
        }
        extended = true;
        used[i] = true;
        prefix.push(i);
        maximal_chains(calls, calls[i].t0, used, prefix, out);
        prefix.pop();
        used[i] = false;
    }
    if !extended {
        out.push(prefix.clone());
    }
}

/// The chain whose key sequence, read from the parent's end backwards, is
/// lexicographically largest.
fn best_chain<'a>(s: &'a GenServer) -> Vec<&'a GenCall> {
    let calls: Vec<&GenCall> = s.calls.iter().filter(|c| c.t0 >= s.t0 && c.t1 <= s.t1).collect();
    let mut all = Vec::new();
    maximal_chains(&calls, s.t1, &mut vec![false; calls.len()], &mut Vec::new(), &mut all);
    let best = all
        .into_iter()
        .max_by_key(|chain| chain.iter().map(|&i| key(calls[i])).collect::<Vec<Key>>())
        .unwrap();
    best.into_iter().map(|i| calls[i]).collect()
}

fn trim_front(segs: &mut Vec<(&'static str, u64)>, mut excess: u64) {
    for s in segs.iter_mut() {
        let take = s.1.min(excess);
        s.1 -= take;
        excess -= take;
    }
    segs.retain(|s| s.1 > 0);
}

/// Chronological (service, ns) pieces of the critical path under `s`.
pub fn oracle_segments(s: &GenServer) -> Vec<(&'static str, u64)> {
    let chain = best_chain(s);
    let mut back: Vec<Vec<(&'static str, u64)>> = Vec::new();
    let mut cursor = s.t1;
    for c in chain {
        back.push(vec![(s.service, cursor - c.t1)]);
        let len = c.t1 - c.t0;
        let mut piece = Vec::new();
        match &c.server {
            None => piece.push((s.service, len)),
            Some(srv) => {
                let mut inner = oracle_segments(srv);
                let d = srv.duration();
                if d <= len {
                    piece.push((srv.service, len - d));
                } else {
                    trim_front(&mut inner, d - len);
                }
                piece.extend(inner);
            }
        }
        back.push(piece);
        cursor = c.t0;
    }
    back.push(vec![(s.service, cursor - s.t0)]);
    back.into_iter().rev().flatten().filter(|p| p.1 > 0).collect()
}

pub fn oracle_per_service(s: &GenServer) -> BTreeMap<String, u64> {
    let mut m = BTreeMap::new();
    for (svc, ns) in oracle_segments(s) {
        *m.entry(svc.to_string()).or_insert(0) += ns;
    }
    m
}
