use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Frontend,
    Logic,
    Cache,
    Store,
    Blob,
}

impl FromStr for Role {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "frontend" => Role::Frontend,
            "logic" => Role::Logic,
            "cache" => Role::Cache,
            "store" => Role::Store,
            "blob" => Role::Blob,
            _ => return Err(()),
        })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Frontend => "frontend",
            Role::Logic => "logic",
            Role::Cache => "cache",
            Role::Store => "store",
            Role::Blob => "blob",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeMode {
    Parallel,
    Serial,
}

impl fmt::Display for EdgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeMode::Parallel => "parallel",
            EdgeMode::Serial => "serial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSpec {
    pub name: String,
    pub role: Role,
    /// 0 asks the launcher for any free port.
    pub port: u16,
    pub workers: usize,
    pub queue_capacity: usize,
    /// Synthetic compute cost in nanoseconds per payload byte.
    pub compute_cost: f64,
    pub slowdown: f64,
    /// Byte budget for cache-role services; `None` uses the default.
    pub capacity: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub caller: String,
    pub callee: String,
    pub mode: EdgeMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceTopology {
    pub services: Vec<ServiceSpec>,
    pub edges: Vec<Edge>,
    pub entry: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("duplicate service {0}")]
    DuplicateService(String),
    #[error("unknown role {0}")]
    UnknownRole(String),
    #[error("unknown service {0}")]
    UnknownService(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

const REQUIRED_KEYS: [&str; 6] = ["role", "port", "workers", "queue", "cost", "slowdown"];

fn syntax(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError {
        line,
        kind: ParseErrorKind::Syntax(reason.into()),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_service(line: usize, words: &[&str]) -> Result<ServiceSpec, ParseError> {
    let Some(&name) = words.get(1) else {
        return Err(syntax(line, "service without a name"));
    };
    if !is_identifier(name) {
        return Err(syntax(line, format!("invalid service name {name:?}")));
    }
    let rest = &words[2..];
    if rest.len() % 2 != 0 {
        return Err(syntax(line, "expected key/value pairs after the service name"));
    }
    let mut spec = ServiceSpec {
        name: name.to_owned(),
        role: Role::Logic,
        port: 0,
        workers: 1,
        queue_capacity: 1,
        compute_cost: 0.0,
        slowdown: 1.0,
        capacity: None,
    };
    let mut seen = HashSet::new();
    for pair in rest.chunks(2) {
        let (key, value) = (pair[0], pair[1]);
        if !seen.insert(key) {
            return Err(syntax(line, format!("repeated key {key}")));
        }
        let bad = |what: &str| syntax(line, format!("invalid {key} {value:?}: {what}"));
        match key {
            "role" => {
                spec.role = value.parse().map_err(|_| ParseError {
                    line,
                    kind: ParseErrorKind::UnknownRole(value.to_owned()),
                })?
            }
            "port" => spec.port = value.parse().map_err(|_| bad("expected 0-65535"))?,
            "workers" => {
                spec.workers = value.parse().map_err(|_| bad("expected an integer"))?;
                if spec.workers == 0 {
                    return Err(bad("must be at least 1"));
                }
            }
            "queue" => {
                spec.queue_capacity = value.parse().map_err(|_| bad("expected an integer"))?;
                if spec.queue_capacity == 0 {
                    return Err(bad("must be at least 1"));
                }
            }
            "cost" => {
                spec.compute_cost = value.parse().map_err(|_| bad("expected a number"))?;
                if !(spec.compute_cost >= 0.0 && spec.compute_cost.is_finite()) {
                    return Err(bad("must be a finite number >= 0"));
                }
            }
            "slowdown" => {
                spec.slowdown = value.parse().map_err(|_| bad("expected a number"))?;
                if !(spec.slowdown > 0.0 && spec.slowdown.is_finite()) {
                    return Err(bad("must be a finite number > 0"));
                }
            }
            "capacity" => spec.capacity = Some(value.parse().map_err(|_| bad("expected bytes"))?),
            _ => return Err(syntax(line, format!("unknown key {key}"))),
        }
    }
    for k in REQUIRED_KEYS {
        if !seen.contains(k) {
            return Err(syntax(line, format!("missing key {k}")));
        }
    }
    Ok(spec)
}

/// Parses the line-oriented topology format. Every problem found is reported.
pub fn parse_topology(text: &str) -> Result<ServiceTopology, Vec<ParseError>> {
    let mut errors = Vec::new();
    let mut services: Vec<ServiceSpec> = Vec::new();
    let mut edges: Vec<(usize, Edge)> = Vec::new();
    let mut entry: Option<(usize, String)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = content.split_whitespace().collect();
        let Some(&head) = words.first() else { continue };
        match head {
            "service" => match parse_service(line, &words) {
                Ok(spec) => {
                    if services.iter().any(|s| s.name == spec.name) {
                        errors.push(ParseError {
                            line,
                            kind: ParseErrorKind::DuplicateService(spec.name),
                        });
                    } else {
                        services.push(spec);
                    }
                }
                Err(e) => errors.push(e),
            },
            "edge" => {
                if words.len() != 4 {
                    errors.push(syntax(line, "expected: edge <caller> <callee> <parallel|serial>"));
                    continue;
                }
                let mode = match words[3] {
                    "parallel" => EdgeMode::Parallel,
                    "serial" => EdgeMode::Serial,
                    other => {
                        errors.push(syntax(line, format!("unknown edge mode {other:?}")));
                        continue;
                    }
                };
                edges.push((
                    line,
                    Edge {
                        caller: words[1].to_owned(),
                        callee: words[2].to_owned(),
                        mode,
                    },
                ));
            }
            "entry" => {
                if words.len() != 2 {
                    errors.push(syntax(line, "expected: entry <name>"));
                } else if entry.is_some() {
                    errors.push(syntax(line, "entry declared twice"));
                } else {
                    entry = Some((line, words[1].to_owned()));
                }
            }
            other => errors.push(syntax(line, format!("unknown declaration {other:?}"))),
        }
    }

    let declared = |n: &str| services.iter().any(|s| s.name == n);
    for (line, e) in &edges {
        for name in [&e.caller, &e.callee] {
            if !declared(name) {
                errors.push(ParseError {
                    line: *line,
                    kind: ParseErrorKind::UnknownService(name.clone()),
                });
            }
        }
    }
    let entry = match entry {
        Some((line, name)) => {
            if !declared(&name) {
                errors.push(ParseError {
                    line,
                    kind: ParseErrorKind::UnknownService(name.clone()),
                });
            }
            name
        }
        None => {
            errors.push(syntax(text.lines().count().max(1), "no entry declared"));
            String::new()
        }
    };
    if !errors.is_empty() {
        errors.sort_by_key(|e| e.line);
        return Err(errors);
    }
    Ok(ServiceTopology {
        services,
        edges: edges.into_iter().map(|(_, e)| e).collect(),
        entry,
    })
}

impl ServiceTopology {
    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn service_mut(&mut self, name: &str) -> Option<&mut ServiceSpec> {
        self.services.iter_mut().find(|s| s.name == name)
    }

    pub fn entry_spec(&self) -> Option<&ServiceSpec> {
        self.service(&self.entry)
    }

    /// Out-edges of `name` in declaration order.
    pub fn callees(&self, name: &str) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.caller == name).collect()
    }

    pub fn out_degree(&self, name: &str, mode: EdgeMode) -> usize {
        self.edges
            .iter()
            .filter(|e| e.caller == name && e.mode == mode)
            .count()
    }

    /// Copy with every port set to 0 so that the launcher picks free ones.
    pub fn with_ephemeral_ports(&self) -> Self {
        let mut t = self.clone();
        for s in &mut t.services {
            s.port = 0;
        }
        t
    }

    /// Serializes back to the text format; `parse_topology` round-trips it.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.services {
            out.push_str(&format!(
                "service {} role {} port {} workers {} queue {} cost {} slowdown {}",
                s.name, s.role, s.port, s.workers, s.queue_capacity, s.compute_cost, s.slowdown
            ));
            if let Some(c) = s.capacity {
                out.push_str(&format!(" capacity {c}"));
            }
            out.push('\n');
        }
        for e in &self.edges {
            out.push_str(&format!("edge {} {} {}\n", e.caller, e.callee, e.mode));
        }
        out.push_str(&format!("entry {}\n", self.entry));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "\
service A role frontend port 9001 workers 2 queue 8 cost 1.5 slowdown 1.0
service B role logic port 9002 workers 1 queue 4 cost 0 slowdown 0.5 # trailing
edge A B serial
entry A
";

    #[test]
    fn minimal_two_services() {
        let t = parse_topology(TWO).unwrap();
        assert_eq!(t.services.len(), 2);
        assert_eq!(t.edges.len(), 1);
        assert_eq!(t.service("B").unwrap().slowdown, 0.5);
        assert_eq!(parse_topology(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn undeclared_callee_named_with_line() {
        let text = TWO.replace("edge A B serial", "edge A C serial");
        let errs = parse_topology(&text).unwrap_err();
        assert_eq!(
            errs,
            vec![ParseError {
                line: 3,
                kind: ParseErrorKind::UnknownService("C".into())
            }]
        );
    }

    #[test]
    fn duplicate_and_role_errors() {
        let text = format!("{TWO}service A role logic port 1 workers 1 queue 1 cost 0 slowdown 1\nservice Z role wizard port 2 workers 1 queue 1 cost 0 slowdown 1\n");
        let errs = parse_topology(&text).unwrap_err();
        assert!(errs.contains(&ParseError {
            line: 5,
            kind: ParseErrorKind::DuplicateService("A".into())
        }));
        assert!(errs.contains(&ParseError {
            line: 6,
            kind: ParseErrorKind::UnknownRole("wizard".into())
        }));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let errs = parse_topology("service A role logic\nbogus\n").unwrap_err();
        assert_eq!(errs[0].line, 1);
        assert_eq!(errs[1].line, 2);
    }
}
