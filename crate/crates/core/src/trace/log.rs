use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct LoadedSpans {
    pub spans: Vec<Span>,
    pub malformed: Vec<MalformedLine>,
}

/// Parses span-log text. Blank lines are ignored; bad lines are reported and skipped.
pub fn parse_span_lines(text: &str, first_line: usize) -> LoadedSpans {
    let mut out = LoadedSpans::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match Span::parse_line(line) {
            Ok(s) => out.spans.push(s),
            Err(e) => out.malformed.push(MalformedLine {
                line: first_line + i,
                reason: e.to_string(),
            }),
        }
    }
    out
}

pub fn load_span_log(path: &Path) -> io::Result<LoadedSpans> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = LoadedSpans::default();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        let Ok(text) = std::str::from_utf8(&line) else {
            out.malformed.push(MalformedLine {
                line: i + 1,
                reason: "not UTF-8".into(),
            });
            continue;
        };
        if text.trim().is_empty() {
            continue;
        }
        match Span::parse_line(text) {
            Ok(s) => out.spans.push(s),
            Err(e) => out.malformed.push(MalformedLine {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn write_span_log(path: &Path, spans: &[Span]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in spans {
        writeln!(w, "{}", s.to_line())?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{SpanKind, SpanStatus};

    fn spans(n: u64) -> Vec<Span> {
        (1..=n)
            .map(|i| Span {
                trace_id: (i as u128) << 70 | 3,
                span_id: i,
                parent_span_id: i / 2,
                service: format!("svc{}", i % 7).into(),
                operation: "Op".into(),
                kind: if i % 2 == 0 { SpanKind::Client } else { SpanKind::Server },
                t_start: i * 100,
                t_end: i * 100 + i,
                net_ns: i / 3,
                app_ns: if i % 2 == 0 { 0 } else { i / 2 },
                status: SpanStatus::Ok,
            })
            .collect()
    }

    #[test]
    fn round_trip_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spans.log");
        let all = spans(100);
        write_span_log(&p, &all).unwrap();
        let loaded = load_span_log(&p).unwrap();
        assert_eq!(loaded.spans, all);
        assert!(loaded.malformed.is_empty());

        let mut text = std::fs::read_to_string(&p).unwrap();
        text.insert_str(0, "garbage line\n");
        std::fs::write(&p, text).unwrap();
        let loaded = load_span_log(&p).unwrap();
        assert_eq!(loaded.spans.len(), 100);
        assert_eq!(loaded.malformed.len(), 1);
        assert_eq!(loaded.malformed[0].line, 1);

        std::fs::write(&p, "").unwrap();
        let loaded = load_span_log(&p).unwrap();
        assert!(loaded.spans.is_empty() && loaded.malformed.is_empty());
    }
}
