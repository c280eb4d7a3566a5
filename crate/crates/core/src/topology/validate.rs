use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::ServiceTopology;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateService(String),
    UnknownService { name: String, referenced_by: String },
    MissingEntry(String),
    Cycle(Vec<String>),
    PortCollision { port: u16, services: Vec<String> },
    InvalidSlowdown(String),
    InvalidProvisioning(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateService(n) => write!(f, "duplicate service {n}"),
            Violation::UnknownService {
                name,
                referenced_by,
            } => write!(f, "unknown service {name} referenced by {referenced_by}"),
            Violation::MissingEntry(n) => write!(f, "entry {n:?} is not a declared service"),
            Violation::Cycle(path) => write!(f, "cycle {}", path.join(" -> ")),
            Violation::PortCollision { port, services } => {
                write!(f, "port {port} used by {}", services.join(", "))
            }
            Violation::InvalidSlowdown(n) => write!(f, "service {n} has a non-positive slowdown"),
            Violation::InvalidProvisioning(n) => {
                write!(f, "service {n} needs workers >= 1, queue >= 1, cost >= 0")
            }
        }
    }
}

/// Checks every topology invariant; an empty result means the topology is valid.
pub fn validate(t: &ServiceTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, s) in t.services.iter().enumerate() {
        if index.insert(s.name.as_str(), i).is_some() {
            out.push(Violation::DuplicateService(s.name.clone()));
        }
        if !(s.slowdown > 0.0 && s.slowdown.is_finite()) {
            out.push(Violation::InvalidSlowdown(s.name.clone()));
        }
        if s.workers == 0 || s.queue_capacity == 0 || !(s.compute_cost >= 0.0) {
            out.push(Violation::InvalidProvisioning(s.name.clone()));
        }
    }
    if !index.contains_key(t.entry.as_str()) {
        out.push(Violation::MissingEntry(t.entry.clone()));
    }
    for e in &t.edges {
        for name in [&e.caller, &e.callee] {
            if !index.contains_key(name.as_str()) {
                out.push(Violation::UnknownService {
                    name: name.clone(),
                    referenced_by: format!("edge {} -> {}", e.caller, e.callee),
                });
            }
        }
    }

    let mut ports: BTreeMap<u16, Vec<String>> = BTreeMap::new();
    for s in &t.services {
        if s.port != 0 {
            ports.entry(s.port).or_default().push(s.name.clone());
        }
    }
    for (port, services) in ports {
        if services.len() > 1 {
            out.push(Violation::PortCollision { port, services });
        }
    }

    for cycle in find_cycles(t, &index) {
        out.push(Violation::Cycle(cycle));
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
enum Mark {
    White,
    Grey,
    Black,
}

/// One cycle per back edge found by depth-first search in declaration order.
fn find_cycles(t: &ServiceTopology, index: &HashMap<&str, usize>) -> Vec<Vec<String>> {
    let n = t.services.len();
    let mut adj = vec![Vec::new(); n];
    for e in &t.edges {
        if let (Some(&a), Some(&b)) = (index.get(e.caller.as_str()), index.get(e.callee.as_str())) {
            adj[a].push(b);
        }
    }
    let mut marks = vec![Mark::White; n];
    let mut stack = Vec::new();
    let mut cycles = Vec::new();

    fn visit(
        v: usize,
        adj: &[Vec<usize>],
        marks: &mut [Mark],
        stack: &mut Vec<usize>,
        cycles: &mut Vec<Vec<usize>>,
    ) {
        marks[v] = Mark::Grey;
        stack.push(v);
        for &w in &adj[v] {
            match marks[w] {
                Mark::White => visit(w, adj, marks, stack, cycles),
                Mark::Grey => {
                    let from = stack.iter().position(|&x| x == w).unwrap();
                    cycles.push(stack[from..].to_vec());
                }
                Mark::Black => {}
            }
        }
        stack.pop();
        marks[v] = Mark::Black;
    }

    let mut raw = Vec::new();
    for v in 0..n {
        if marks[v] == Mark::White {
            visit(v, &adj, &mut marks, &mut stack, &mut raw);
        }
    }
    for c in raw {
        cycles.push(c.into_iter().map(|i| t.services[i].name.clone()).collect());
    }
    cycles
}

/// True when the edge set has a directed cycle.
pub fn has_cycle(t: &ServiceTopology) -> bool {
    validate(t).iter().any(|v| matches!(v, Violation::Cycle(_)))
}
