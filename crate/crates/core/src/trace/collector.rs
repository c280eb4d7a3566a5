use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use thiserror::Error;

use super::log::{parse_span_lines, LoadedSpans};
use super::{Span, SpanKind};
use crate::rpc::{Fault, Handler, Reply, Request, RpcServer, ServerConfig, ServerHandle};
use crate::wire::{Field, RpcMessage};

pub const SPAN_BATCH_METHOD: &str = "SpanBatch";

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("cannot bind collector on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("span log {path}: {source}")]
    Log { path: PathBuf, source: io::Error },
}

struct Store {
    seen: HashSet<(u128, u64, SpanKind)>,
    by_trace: HashMap<u128, Vec<u64>>,
    by_service: HashMap<Arc<str>, u64>,
    writer: BufWriter<File>,
    offset: u64,
    persisted: u64,
    duplicates: u64,
    malformed: u64,
}

impl Store {
    /// Appends one line unless its span was seen before.
    fn ingest(&mut self, span: &Span, line: &str) -> io::Result<bool> {
        if !self.seen.insert(span.key()) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.by_trace.entry(span.trace_id).or_default().push(self.offset);
        self.offset += line.len() as u64 + 1;
        *self.by_service.entry(span.service.clone()).or_default() += 1;
        self.persisted += 1;
        Ok(true)
    }
}

struct Ingest {
    store: Arc<Mutex<Store>>,
}

impl Handler for Ingest {
    type Worker = ();

    fn worker(&self, _index: usize) {
        super::lower_thread_priority();
    }

    fn handle(&self, _w: &mut (), req: &Request) -> Reply {
        if req.msg.method != SPAN_BATCH_METHOD {
            return Err(Fault::new("UnknownMethod", req.msg.method.clone()));
        }
        let body = req.msg.field(0).unwrap_or_default();
        let text = std::str::from_utf8(body).map_err(|_| Fault::new("BadBatch", "not UTF-8"))?;
        let mut store = self.store.lock();
        let mut n = 0;
        for line in text.lines().map(|l| l.trim_end_matches('\r')) {
            if line.trim().is_empty() {
                continue;
            }
            match Span::parse_line(line) {
                Ok(s) => n += store.ingest(&s, line).map_err(|e| Fault::new("Io", e.to_string()))? as u64,
                Err(_) => store.malformed += 1,
            }
        }
        store.writer.flush().map_err(|e| Fault::new("Io", e.to_string()))?;
        Ok(vec![Field::u64(0, n)])
    }
}

/// Central span sink: deduplicates by `(trace_id, span_id, kind)` and appends
/// to a span log, keeping a per-trace offset index in memory.
pub struct Collector {
    server: ServerHandle,
    store: Arc<Mutex<Store>>,
    path: PathBuf,
}

impl Collector {
    /// Starts a collector appending to `log_path`. Spans already in the log
    /// are loaded so that redelivered spans are still recognized.
    pub fn start(bind: SocketAddr, log_path: &Path) -> Result<Collector, CollectorError> {
        let log_err = |source| CollectorError::Log {
            path: log_path.to_owned(),
            source,
        };
        let mut seen = HashSet::new();
        let mut by_trace: HashMap<u128, Vec<u64>> = HashMap::new();
        let mut by_service: HashMap<Arc<str>, u64> = HashMap::new();
        let mut offset = 0u64;
        let mut persisted = 0u64;
        if log_path.exists() {
            let mut r = BufReader::new(File::open(log_path).map_err(log_err)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = r.read_line(&mut line).map_err(log_err)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                if let Ok(s) = Span::parse_line(&line) {
                    if seen.insert(s.key()) {
                        by_trace.entry(s.trace_id).or_default().push(offset);
                        *by_service.entry(s.service.clone()).or_default() += 1;
                        persisted += 1;
                    }
                }
                offset += n as u64;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(log_path)
            .map_err(log_err)?;
        file.set_len(offset).map_err(log_err)?;
        let mut writer = BufWriter::new(file);
        writer.seek(SeekFrom::Start(offset)).map_err(log_err)?;
        let store = Arc::new(Mutex::new(Store {
            seen,
            by_trace,
            by_service,
            writer,
            offset,
            persisted,
            duplicates: 0,
            malformed: 0,
        }));
        let listener =
            TcpListener::bind(bind).map_err(|source| CollectorError::Bind { addr: bind, source })?;
        let server = RpcServer::start(
            listener,
            ServerConfig::new("collector", 1, 4096),
            Arc::new(Ingest {
                store: store.clone(),
            }),
            None,
        )
        .map_err(|source| CollectorError::Bind { addr: bind, source })?;
        Ok(Collector {
            server,
            store,
            path: log_path.to_owned(),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.server.addr()
    }

    pub fn log_path(&self) -> &Path {
        &self.path
    }

    pub fn persisted(&self) -> u64 {
        self.store.lock().persisted
    }

    pub fn duplicates(&self) -> u64 {
        self.store.lock().duplicates
    }

    pub fn malformed(&self) -> u64 {
        self.store.lock().malformed
    }

    pub fn persisted_by_service(&self) -> BTreeMap<String, u64> {
        self.store.lock().by_service.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    /// Current end of the log, for use with [`Collector::spans_since`].
    pub fn mark(&self) -> u64 {
        self.store.lock().offset
    }

    /// Spans appended after `mark`.
    pub fn spans_since(&self, mark: u64) -> io::Result<LoadedSpans> {
        let end = self.mark();
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(mark))?;
        let mut buf = String::new();
        f.take(end.saturating_sub(mark)).read_to_string(&mut buf)?;
        Ok(parse_span_lines(&buf, 1))
    }

    /// All persisted spans of one trace, via the offset index.
    pub fn trace(&self, trace_id: u128) -> io::Result<Vec<Span>> {
        let offsets = self
            .store
            .lock()
            .by_trace
            .get(&trace_id)
            .cloned()
            .unwrap_or_default();
        let mut r = BufReader::new(File::open(&self.path)?);
        let mut out = Vec::with_capacity(offsets.len());
        let mut line = String::new();
        for off in offsets {
            r.seek(SeekFrom::Start(off))?;
            line.clear();
            r.read_line(&mut line)?;
            if let Ok(s) = Span::parse_line(&line) {
                out.push(s);
            }
        }
        Ok(out)
    }

    pub fn stop(&mut self) {
        self.server.stop(Duration::from_secs(5));
        let _ = self.store.lock().writer.flush();
    }
}

impl Drop for Collector {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Builds a `SpanBatch` request body from spans.
pub(crate) fn batch_request(ctx: crate::wire::TraceContext, spans: &[Span]) -> RpcMessage {
    let mut body = String::with_capacity(160 * spans.len());
    for s in spans {
        s.write_line(&mut body);
        body.push('\n');
    }
    RpcMessage::request(ctx, SPAN_BATCH_METHOD, vec![Field::new(0, body.into_bytes())])
}
