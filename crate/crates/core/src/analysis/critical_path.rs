//! Critical-path extraction by backward sweep.
//!
//! For a server span the sweep starts at its end and repeatedly takes the
//! outgoing call whose client interval ends latest at or before the cursor
//! (ties: earlier start, then smaller span id), then moves the cursor to that
//! call's start. Time between chosen calls belongs to the server itself. A
//! chosen call contributes its matched server's own critical path plus the
//! transport time `client duration - server duration`, which is charged to
//! the callee as network. Everything is duration arithmetic, so no two
//! processes' clocks are ever compared.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::trace::{SpanKind, SpanNode, SpanTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Compute,
    Network,
    Wait,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Compute => "compute",
            Category::Network => "network",
            Category::Wait => "wait",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSegment {
    pub service: Arc<str>,
    pub category: Category,
    pub duration_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("trace {0:032x} has no server span at its root")]
    NoServerRoot(u128),
    #[error("span {0:016x} ends before it starts")]
    NegativeInterval(u64),
}

/// Segments in chronological order; their durations sum to the root server
/// span's duration.
pub fn critical_path(tree: &SpanTree) -> Result<Vec<PathSegment>, PathError> {
    let root = tree
        .root_server()
        .ok_or_else(|| PathError::NoServerRoot(tree.trace_id()))?;
    let mut out = Vec::new();
    server_path(root, &mut out)?;
    Ok(out)
}

/// Sum of segment durations per service.
pub fn per_service(segments: &[PathSegment]) -> BTreeMap<Arc<str>, u64> {
    let mut m = BTreeMap::new();
    for s in segments {
        *m.entry(s.service.clone()).or_insert(0) += s.duration_ns;
    }
    m
}

/// Splits `gap` ns of a server's own time in proportion to its recorded
/// network, handler and queueing time.
pub(crate) fn own_time(node: &SpanNode, gap: u64, out: &mut Vec<PathSegment>) {
    if gap == 0 {
        return;
    }
    let s = &node.span;
    let d = s.duration() as u128;
    let (net, wait) = if d == 0 {
        (0, 0)
    } else {
        (
            (gap as u128 * s.net_ns as u128 / d) as u64,
            (gap as u128 * s.wait_ns() as u128 / d) as u64,
        )
    };
    for (category, ns) in [
        (Category::Wait, wait),
        (Category::Network, net),
        (Category::Compute, gap - net - wait),
    ] {
        if ns > 0 {
            out.push(PathSegment {
                service: s.service.clone(),
                category,
                duration_ns: ns,
            });
        }
    }
}

/// Drops `excess` ns from the front of `segs`.
fn trim_front(segs: &mut Vec<PathSegment>, mut excess: u64) {
    let mut cut = 0;
    for s in segs.iter_mut() {
        if excess == 0 {
            break;
        }
        let take = s.duration_ns.min(excess);
        s.duration_ns -= take;
        excess -= take;
        if s.duration_ns == 0 {
            cut += 1;
        } else {
            break;
        }
    }
    segs.drain(..cut);
}

/// Contribution of one chosen outgoing call, in chronological order.
pub(crate) fn call_path(caller: &SpanNode, call: &SpanNode, out: &mut Vec<PathSegment>) -> Result<(), PathError> {
    let d_client = call.span.duration();
    match call.matched_server() {
        None if d_client == 0 => {}
        None => out.push(PathSegment {
            service: caller.span.service.clone(),
            category: Category::Network,
            duration_ns: d_client,
        }),
        Some(server) => {
            let mut inner = Vec::new();
            server_path(server, &mut inner)?;
            let d_server = server.span.duration();
            if d_server <= d_client {
                if d_client > d_server {
                    out.push(PathSegment {
                        service: server.span.service.clone(),
                        category: Category::Network,
                        duration_ns: d_client - d_server,
                    });
                }
            } else {
                trim_front(&mut inner, d_server - d_client);
            }
            out.extend(inner);
        }
    }
    Ok(())
}

/// Outgoing calls of `node` that lie inside its interval.
pub(crate) fn calls_of(node: &SpanNode) -> Vec<&SpanNode> {
    node.children
        .iter()
        .filter(|c| {
            c.span.kind == SpanKind::Client
                && c.span.t_start >= node.span.t_start
                && c.span.t_end <= node.span.t_end
        })
        .collect()
}

fn server_path(node: &SpanNode, out: &mut Vec<PathSegment>) -> Result<(), PathError> {
    let s = &node.span;
    if s.t_end < s.t_start {
        return Err(PathError::NegativeInterval(s.span_id));
    }
    let calls = calls_of(node);
    if let Some(bad) = calls.iter().find(|c| c.span.t_end < c.span.t_start) {
        return Err(PathError::NegativeInterval(bad.span.span_id));
    }
    let mut used = vec![false; calls.len()];
    let mut cursor = s.t_end;
    // Built back to front, reversed at the end.
    let mut pieces: Vec<Vec<PathSegment>> = Vec::new();
    loop {
        let pick = calls
            .iter()
            .enumerate()
            .filter(|(i, c)| !used[*i] && c.span.t_end <= cursor)
            .max_by(|(_, a), (_, b)| {
                a.span
                    .t_end
                    .cmp(&b.span.t_end)
                    .then(b.span.t_start.cmp(&a.span.t_start))
                    .then(b.span.span_id.cmp(&a.span.span_id))
            })
            .map(|(i, _)| i);
        let Some(i) = pick else { break };
        used[i] = true;
        let c = calls[i];
        let mut gap = Vec::new();
        own_time(node, cursor - c.span.t_end, &mut gap);
        pieces.push(gap);
        let mut child = Vec::new();
        call_path(node, c, &mut child)?;
        pieces.push(child);
        cursor = c.span.t_start;
    }
    let mut head = Vec::new();
    own_time(node, cursor - s.t_start, &mut head);
    pieces.push(head);
    for p in pieces.into_iter().rev() {
        out.extend(p);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Span, SpanStatus};

    pub(crate) fn span(id: u64, parent: u64, svc: &str, kind: SpanKind, t: (u64, u64), net: u64, app: u64) -> Span {
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

    fn total(p: &[PathSegment]) -> u64 {
        p.iter().map(|s| s.duration_ns).sum()
    }

    #[test]
    fn leaf_is_one_compute_segment() {
        let t = SpanTree {
            root: SpanNode::leaf(span(1, 0, "a", SpanKind::Server, (0, 10), 0, 10)),
        };
        let p = critical_path(&t).unwrap();
        assert_eq!(
            p,
            vec![PathSegment {
                service: "a".into(),
                category: Category::Compute,
                duration_ns: 10
            }]
        );
    }

    fn call(id: u64, t: (u64, u64), server: (u64, u64), svc: &str) -> SpanNode {
        SpanNode {
            span: span(id, 1, "a", SpanKind::Client, t, 0, 0),
            children: vec![SpanNode::leaf(span(
                id,
                1,
                svc,
                SpanKind::Server,
                server,
                0,
                server.1 - server.0,
            ))],
        }
    }

    #[test]
    fn serial_child_conserves_time() {
        let root = SpanNode {
            span: span(1, 0, "a", SpanKind::Server, (0, 10), 0, 10),
            children: vec![call(2, (2, 6), (100, 103), "b")],
        };
        let p = critical_path(&SpanTree { root }).unwrap();
        assert_eq!(total(&p), 10);
        let m = per_service(&p);
        assert_eq!(m[&Arc::from("a")], 6);
        assert_eq!(m[&Arc::from("b")], 4);
    }

    #[test]
    fn parallel_children_pick_latest_end() {
        let root = SpanNode {
            span: span(1, 0, "a", SpanKind::Server, (0, 10), 0, 10),
            children: vec![call(2, (0, 5), (0, 5), "b"), call(3, (1, 8), (0, 7), "c")],
        };
        let p = critical_path(&SpanTree { root }).unwrap();
        let m = per_service(&p);
        assert_eq!(m[&Arc::from("a")], 3);
        assert_eq!(m[&Arc::from("c")], 7);
        assert!(!m.contains_key(&Arc::from("b")));
        assert_eq!(total(&p), 10);
    }

    #[test]
    fn longer_server_is_trimmed() {
        let root = SpanNode {
            span: span(1, 0, "a", SpanKind::Server, (0, 10), 0, 10),
            children: vec![call(2, (2, 6), (0, 9), "b")],
        };
        let p = critical_path(&SpanTree { root }).unwrap();
        assert_eq!(total(&p), 10);
        assert_eq!(per_service(&p)[&Arc::from("b")], 4);
    }

    #[test]
    fn own_time_is_split_by_accounting() {
        let t = SpanTree {
            root: SpanNode::leaf(span(1, 0, "a", SpanKind::Server, (0, 10), 3, 6)),
        };
        let p = critical_path(&t).unwrap();
        let get = |c| p.iter().find(|s| s.category == c).map(|s| s.duration_ns);
        assert_eq!(get(Category::Network), Some(3));
        assert_eq!(get(Category::Compute), Some(6));
        assert_eq!(get(Category::Wait), Some(1));
    }
}
