use std::collections::{BTreeMap, HashMap};

use super::{Span, SpanKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanNode {
    pub span: Span,
    /// Ordered by `t_start`, then span id.
    pub children: Vec<SpanNode>,
}

impl SpanNode {
    pub fn leaf(span: Span) -> Self {
        SpanNode {
            span,
            children: Vec::new(),
        }
    }

    /// Number of spans in this subtree.
    pub fn len(&self) -> usize {
        1 + self.children.iter().map(SpanNode::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(SpanNode::depth).max().unwrap_or(0)
    }

    /// Pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a SpanNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// The server span answering this client span, if it was recorded.
    pub fn matched_server(&self) -> Option<&SpanNode> {
        if self.span.kind != SpanKind::Client {
            return None;
        }
        self.children
            .iter()
            .find(|c| c.span.kind == SpanKind::Server && c.span.span_id == self.span.span_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanTree {
    pub root: SpanNode,
}

impl SpanTree {
    pub fn trace_id(&self) -> u128 {
        self.root.span.trace_id
    }

    pub fn len(&self) -> usize {
        self.root.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spans(&self) -> Vec<&Span> {
        let mut out = Vec::new();
        self.root.walk(&mut |n| out.push(&n.span));
        out
    }

    /// The server span at the top of the tree: the root itself, or the server
    /// answering a client root.
    pub fn root_server(&self) -> Option<&SpanNode> {
        match self.root.span.kind {
            SpanKind::Server => Some(&self.root),
            SpanKind::Client => self.root.matched_server(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Parent {
    Root,
    Node(usize),
    Missing,
}

/// Groups spans into one tree per root. A server span hangs under the client
/// span with the same span id when one exists, otherwise under the server span
/// named by its parent id. Spans that cannot be reached from a root are
/// returned as orphans.
pub fn assemble(spans: impl IntoIterator<Item = Span>) -> (Vec<SpanTree>, Vec<Span>) {
    let mut by_trace: BTreeMap<u128, Vec<Span>> = BTreeMap::new();
    for s in spans {
        by_trace.entry(s.trace_id).or_default().push(s);
    }
    let mut trees = Vec::new();
    let mut orphans = Vec::new();
    for (_, group) in by_trace {
        assemble_trace(group, &mut trees, &mut orphans);
    }
    orphans.sort_by_key(|s| s.key());
    (trees, orphans)
}

fn assemble_trace(mut group: Vec<Span>, trees: &mut Vec<SpanTree>, orphans: &mut Vec<Span>) {
    group.sort_by_key(|s| s.key());
    group.dedup_by_key(|s| s.key());
    let mut servers = HashMap::new();
    let mut clients = HashMap::new();
    for (i, s) in group.iter().enumerate() {
        match s.kind {
            SpanKind::Server => servers.insert(s.span_id, i),
            SpanKind::Client => clients.insert(s.span_id, i),
        };
    }
    let parent_of = |s: &Span| -> Parent {
        if s.kind == SpanKind::Server {
            if let Some(&c) = clients.get(&s.span_id) {
                return Parent::Node(c);
            }
        }
        if s.parent_span_id == 0 {
            return Parent::Root;
        }
        match servers.get(&s.parent_span_id) {
            Some(&p) => Parent::Node(p),
            None => Parent::Missing,
        }
    };
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); group.len()];
    let mut roots = Vec::new();
    for (i, s) in group.iter().enumerate() {
        match parent_of(s) {
            Parent::Root => roots.push(i),
            Parent::Node(p) if p != i => children[p].push(i),
            _ => {}
        }
    }
    let mut used = vec![false; group.len()];
    let mut built = Vec::new();
    for &r in &roots {
        built.push(build(r, &group, &children, &mut used));
    }
    for (i, s) in group.into_iter().enumerate() {
        if !used[i] {
            orphans.push(s);
        }
    }
    built.sort_by_key(|n| (n.span.span_id, n.span.kind));
    trees.extend(built.into_iter().map(|root| SpanTree { root }));
}

fn build(i: usize, group: &[Span], children: &[Vec<usize>], used: &mut [bool]) -> SpanNode {
    used[i] = true;
    let mut kids: Vec<SpanNode> = Vec::new();
    for &c in &children[i] {
        if !used[c] {
            kids.push(build(c, group, children, used));
        }
    }
    kids.sort_by_key(|n| (n.span.t_start, n.span.span_id, n.span.kind));
    SpanNode {
        span: group[i].clone(),
        children: kids,
    }
}
