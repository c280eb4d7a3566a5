use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::wire::TraceContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpanKind {
    Server,
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpanStatus {
    Ok,
    Error,
    DroppedChild,
}

/// One timed record of an RPC, seen from the server or the calling side.
///
/// `t_start`/`t_end` are nanoseconds on the recording process's clock. For a
/// server span `t_end - t_start = net_ns + app_ns + wait`, where wait is the
/// time the request sat in the admission queue. Client spans carry no
/// net/app split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Span {
    pub trace_id: u128,
    pub span_id: u64,
    pub parent_span_id: u64,
    pub service: Arc<str>,
    pub operation: Arc<str>,
    pub kind: SpanKind,
    pub t_start: u64,
    pub t_end: u64,
    pub net_ns: u64,
    pub app_ns: u64,
    pub status: SpanStatus,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpanError {
    #[error("span ends before it starts")]
    NegativeInterval,
    #[error("net + app exceeds the span duration")]
    Overaccounted,
    #[error("client span with nonzero app time")]
    ClientAppTime,
    #[error("zero trace or span id")]
    ZeroId,
}

impl Span {
    pub fn context(&self) -> TraceContext {
        TraceContext {
            trace_id: self.trace_id,
            span_id: self.span_id,
            parent_span_id: self.parent_span_id,
        }
    }

    pub fn duration(&self) -> u64 {
        self.t_end.saturating_sub(self.t_start)
    }

    /// Queueing remainder: duration not covered by network or handler time.
    pub fn wait_ns(&self) -> u64 {
        self.duration()
            .saturating_sub(self.net_ns.saturating_add(self.app_ns))
    }

    pub fn is_root(&self) -> bool {
        self.parent_span_id == 0
    }

    pub fn check(&self) -> Result<(), SpanError> {
        if self.trace_id == 0 || self.span_id == 0 {
            return Err(SpanError::ZeroId);
        }
        if self.t_end < self.t_start {
            return Err(SpanError::NegativeInterval);
        }
        if self.net_ns.saturating_add(self.app_ns) > self.duration() {
            return Err(SpanError::Overaccounted);
        }
        if self.kind == SpanKind::Client && self.app_ns != 0 {
            return Err(SpanError::ClientAppTime);
        }
        Ok(())
    }

    /// Dedup key used by the collector.
    pub fn key(&self) -> (u128, u64, SpanKind) {
        (self.trace_id, self.span_id, self.kind)
    }

    /// One tab-separated span-log line, without the trailing newline.
    pub fn to_line(&self) -> String {
        let mut out = String::with_capacity(160);
        self.write_line(&mut out);
        out
    }

    /// Appends the log line for this span, without the newline.
    pub fn write_line(&self, out: &mut String) {
        use std::fmt::Write;
        let _ = write!(
            out,
            "{:032x}\t{:016x}\t{:016x}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.trace_id,
            self.span_id,
            self.parent_span_id,
            self.service,
            self.operation,
            self.kind,
            self.t_start,
            self.t_end,
            self.net_ns,
            self.app_ns,
            self.status
        );
    }

    pub fn parse_line(line: &str) -> Result<Span, ParseSpanError> {
        let mut parts = [""; 11];
        let mut count = 0;
        for (i, p) in line.trim_end_matches(['\r', '\n']).split('\t').enumerate() {
            if i < 11 {
                parts[i] = p;
            }
            count += 1;
        }
        if count != 11 {
            return Err(ParseSpanError::FieldCount(count));
        }
        let hex128 = |s: &str| {
            if s.len() != 32 {
                return Err(ParseSpanError::Field("trace_id"));
            }
            u128::from_str_radix(s, 16).map_err(|_| ParseSpanError::Field("trace_id"))
        };
        let hex64 = |s: &str, name: &'static str| {
            if s.len() != 16 {
                return Err(ParseSpanError::Field(name));
            }
            u64::from_str_radix(s, 16).map_err(|_| ParseSpanError::Field(name))
        };
        let dec = |s: &str, name: &'static str| s.parse::<u64>().map_err(|_| ParseSpanError::Field(name));
        let name = |s: &str, field: &'static str| {
            if s.is_empty() {
                Err(ParseSpanError::Field(field))
            } else {
                Ok(Arc::<str>::from(s))
            }
        };
        let span = Span {
            trace_id: hex128(parts[0])?,
            span_id: hex64(parts[1], "span_id")?,
            parent_span_id: hex64(parts[2], "parent_span_id")?,
            service: name(parts[3], "service")?,
            operation: name(parts[4], "operation")?,
            kind: parts[5].parse()?,
            t_start: dec(parts[6], "t_start")?,
            t_end: dec(parts[7], "t_end")?,
            net_ns: dec(parts[8], "net_ns")?,
            app_ns: dec(parts[9], "app_ns")?,
            status: parts[10].parse()?,
        };
        span.check().map_err(ParseSpanError::Invalid)?;
        Ok(span)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseSpanError {
    #[error("expected 11 tab-separated fields, found {0}")]
    FieldCount(usize),
    #[error("malformed {0}")]
    Field(&'static str),
    #[error("span violates invariants: {0}")]
    Invalid(SpanError),
}

impl fmt::Display for SpanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpanKind::Server => "server",
            SpanKind::Client => "client",
        })
    }
}

impl FromStr for SpanKind {
    type Err = ParseSpanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "server" => Ok(SpanKind::Server),
            "client" => Ok(SpanKind::Client),
            _ => Err(ParseSpanError::Field("kind")),
        }
    }
}

impl fmt::Display for SpanStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpanStatus::Ok => "ok",
            SpanStatus::Error => "error",
            SpanStatus::DroppedChild => "dropped_child",
        })
    }
}

impl FromStr for SpanStatus {
    type Err = ParseSpanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(SpanStatus::Ok),
            "error" => Ok(SpanStatus::Error),
            "dropped_child" => Ok(SpanStatus::DroppedChild),
            _ => Err(ParseSpanError::Field("status")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> Span {
        Span {
            trace_id: 0xABCD,
            span_id: 0x12,
            parent_span_id: 0,
            service: "frontend".into(),
            operation: "ComposePage".into(),
            kind: SpanKind::Server,
            t_start: 1_000,
            t_end: 11_000,
            net_ns: 3_000,
            app_ns: 6_000,
            status: SpanStatus::Ok,
        }
    }

    #[test]
    fn line_round_trip() {
        let s = sample();
        let line = s.to_line();
        assert!(line.starts_with("0000000000000000000000000000abcd\t0000000000000012\t0000000000000000\t"));
        assert_eq!(Span::parse_line(&line).unwrap(), s);
        assert_eq!(s.wait_ns(), 1_000);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Span::parse_line("not a span").is_err());
        let mut s = sample();
        s.net_ns = 9_000;
        assert_eq!(
            Span::parse_line(&s.to_line()),
            Err(ParseSpanError::Invalid(SpanError::Overaccounted))
        );
    }
}
