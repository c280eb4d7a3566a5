//! Binary framing for the service RPC protocol.
//!
//! A frame is a 4-byte big-endian payload length followed by the payload:
//!
//! ```text
//! version(1) kind(1) trace_id(16) span_id(8) parent_span_id(8)
//! method_len(2) method(method_len) field_count(2)
//! { tag(1) value_len(4) value(value_len) } * field_count
//! ```
//!
//! All integers are big-endian and fixed width. The decoder never reads past
//! the declared payload length and rejects anything the encoder could not have
//! produced.

use std::io::{self, Read};
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub const WIRE_VERSION: u8 = 0x01;
pub const DEFAULT_MAX_FRAME: usize = 16 << 20;
pub const MAX_METHOD_LEN: usize = 1024;

/// Fixed part of the payload: everything except the method bytes and fields.
const FIXED_HEADER: usize = 1 + 1 + 16 + 8 + 8 + 2 + 2;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("frame payload of {size} bytes exceeds max_frame {max}")]
    OversizeFrame { size: usize, max: usize },
    #[error("invalid method: {0}")]
    InvalidMethod(&'static str),
    #[error("too many fields: {0}")]
    TooManyFields(usize),
    #[error("truncated frame: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported wire version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown message kind {0}")]
    BadKind(u8),
    #[error("duplicate field tag {0}")]
    DuplicateTag(u8),
    #[error("{0} trailing bytes after the last field")]
    TrailingBytes(usize),
    #[error("zero trace or span id")]
    ZeroId,
}

/// Trace lineage carried on every message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TraceContext {
    pub trace_id: u128,
    pub span_id: u64,
    /// 0 marks the trace root.
    pub parent_span_id: u64,
}

impl TraceContext {
    /// Starts a new trace with `ids` as the identifier source.
    pub fn new_root(ids: &IdSource) -> Self {
        TraceContext {
            trace_id: ids.next_trace_id(),
            span_id: ids.next_span_id(),
            parent_span_id: 0,
        }
    }

    pub fn is_root(&self) -> bool {
        self.parent_span_id == 0
    }

    /// Derives the context for an outbound call made while serving `self`.
    pub fn child(&self, ids: &IdSource) -> Self {
        child_context(self, ids)
    }
}

/// Same trace, parented on `parent.span_id`, with a fresh span id.
pub fn child_context(parent: &TraceContext, ids: &IdSource) -> TraceContext {
    let mut span_id = ids.next_span_id();
    while span_id == parent.span_id {
        span_id = ids.next_span_id();
    }
    TraceContext {
        trace_id: parent.trace_id,
        span_id,
        parent_span_id: parent.span_id,
    }
}

/// Collision-free identifier source.
///
/// Ids are the splitmix64 finalizer applied to a Weyl sequence. The finalizer
/// is a bijection on `u64`, so ids repeat only after 2^64 draws. A random salt
/// keeps separate processes from sharing a sequence.
#[derive(Debug)]
pub struct IdSource {
    state: AtomicU64,
}

const WEYL: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl IdSource {
    pub fn with_seed(seed: u64) -> Self {
        IdSource {
            state: AtomicU64::new(seed),
        }
    }

    pub fn random() -> Self {
        Self::with_seed(rand::random())
    }

    /// Process-wide shared source.
    pub fn global() -> &'static IdSource {
        static GLOBAL: std::sync::OnceLock<IdSource> = std::sync::OnceLock::new();
        GLOBAL.get_or_init(IdSource::random)
    }

    pub fn next_span_id(&self) -> u64 {
        loop {
            let s = self.state.fetch_add(WEYL, Ordering::Relaxed).wrapping_add(WEYL);
            let id = splitmix64(s);
            if id != 0 {
                return id;
            }
        }
    }

    pub fn next_trace_id(&self) -> u128 {
        let hi = self.next_span_id() as u128;
        let lo = self.next_span_id() as u128;
        (hi << 64) | lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Request = 0,
    Response = 1,
    Error = 2,
}

impl TryFrom<u8> for MessageKind {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        match v {
            0 => Ok(MessageKind::Request),
            1 => Ok(MessageKind::Response),
            2 => Ok(MessageKind::Error),
            other => Err(WireError::BadKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub tag: u8,
    pub value: Vec<u8>,
}

impl Field {
    pub fn new(tag: u8, value: impl Into<Vec<u8>>) -> Self {
        Field {
            tag,
            value: value.into(),
        }
    }

    pub fn u64(tag: u8, v: u64) -> Self {
        Field::new(tag, v.to_be_bytes().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcMessage {
    pub kind: MessageKind,
    pub context: TraceContext,
    pub method: String,
    pub fields: Vec<Field>,
}

impl RpcMessage {
    pub fn request(context: TraceContext, method: impl Into<String>, fields: Vec<Field>) -> Self {
        RpcMessage {
            kind: MessageKind::Request,
            context,
            method: method.into(),
            fields,
        }
    }

    pub fn response(context: TraceContext, fields: Vec<Field>) -> Self {
        RpcMessage {
            kind: MessageKind::Response,
            context,
            method: String::new(),
            fields,
        }
    }

    /// Error reply: tag 0 carries the error code, tag 1 a human-readable message.
    pub fn error(context: TraceContext, code: &str, message: &str) -> Self {
        RpcMessage {
            kind: MessageKind::Error,
            context,
            method: String::new(),
            fields: vec![Field::new(0, code.as_bytes()), Field::new(1, message.as_bytes())],
        }
    }

    pub fn field(&self, tag: u8) -> Option<&[u8]> {
        self.fields
            .iter()
            .find(|f| f.tag == tag)
            .map(|f| f.value.as_slice())
    }

    pub fn error_code(&self) -> Option<&str> {
        if self.kind != MessageKind::Error {
            return None;
        }
        self.field(0).and_then(|v| std::str::from_utf8(v).ok())
    }

    /// Bytes the payload will occupy once encoded.
    pub fn payload_len(&self) -> usize {
        FIXED_HEADER
            + self.method.len()
            + self.fields.iter().map(|f| 5 + f.value.len()).sum::<usize>()
    }

    fn check(&self, max_frame: usize) -> Result<(), WireError> {
        if self.kind == MessageKind::Request && self.method.is_empty() {
            return Err(WireError::InvalidMethod("request with empty method"));
        }
        if self.method.len() > MAX_METHOD_LEN {
            return Err(WireError::InvalidMethod("method longer than 1024 bytes"));
        }
        if self.fields.len() > u16::MAX as usize {
            return Err(WireError::TooManyFields(self.fields.len()));
        }
        let mut seen = [false; 256];
        for f in &self.fields {
            if std::mem::replace(&mut seen[f.tag as usize], true) {
                return Err(WireError::DuplicateTag(f.tag));
            }
            if f.value.len() > u32::MAX as usize {
                return Err(WireError::OversizeFrame {
                    size: f.value.len(),
                    max: max_frame,
                });
            }
        }
        let size = self.payload_len();
        if size > max_frame {
            return Err(WireError::OversizeFrame {
                size,
                max: max_frame,
            });
        }
        Ok(())
    }
}

/// Encodes `msg` as a length-prefixed frame, refusing payloads over `max_frame`.
pub fn encode_frame_with(msg: &RpcMessage, max_frame: usize) -> Result<Vec<u8>, WireError> {
    msg.check(max_frame)?;
    let payload_len = msg.payload_len();
    let mut out = Vec::with_capacity(4 + payload_len);
    out.extend_from_slice(&(payload_len as u32).to_be_bytes());
    out.push(WIRE_VERSION);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.context.trace_id.to_be_bytes());
    out.extend_from_slice(&msg.context.span_id.to_be_bytes());
    out.extend_from_slice(&msg.context.parent_span_id.to_be_bytes());
    out.extend_from_slice(&(msg.method.len() as u16).to_be_bytes());
    out.extend_from_slice(msg.method.as_bytes());
    out.extend_from_slice(&(msg.fields.len() as u16).to_be_bytes());
    for f in &msg.fields {
        out.push(f.tag);
        out.extend_from_slice(&(f.value.len() as u32).to_be_bytes());
        out.extend_from_slice(&f.value);
    }
    debug_assert_eq!(out.len(), 4 + payload_len);
    Ok(out)
}

pub fn encode_frame(msg: &RpcMessage) -> Result<Vec<u8>, WireError> {
    encode_frame_with(msg, DEFAULT_MAX_FRAME)
}

/// Decodes one complete frame. `bytes` must hold exactly the length prefix and
/// the payload it declares.
pub fn decode_frame(bytes: &[u8]) -> Result<RpcMessage, WireError> {
    decode_frame_with(bytes, DEFAULT_MAX_FRAME)
}

pub fn decode_frame_with(bytes: &[u8], max_frame: usize) -> Result<RpcMessage, WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            available: bytes.len(),
        });
    }
    let declared = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if declared > max_frame {
        return Err(WireError::OversizeFrame {
            size: declared,
            max: max_frame,
        });
    }
    let body = &bytes[4..];
    if body.len() < declared {
        return Err(WireError::Truncated {
            needed: declared,
            available: body.len(),
        });
    }
    if body.len() > declared {
        return Err(WireError::TrailingBytes(body.len() - declared));
    }
    decode_payload(body)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(WireError::Truncated {
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, WireError> {
        let b = self.take(16)?;
        Ok(u128::from_be_bytes(b.try_into().unwrap()))
    }
}

/// Decodes a payload (the bytes after the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<RpcMessage, WireError> {
    let mut c = Cursor {
        buf: payload,
        pos: 0,
    };
    let version = c.u8()?;
    if version != WIRE_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let kind = MessageKind::try_from(c.u8()?)?;
    let context = TraceContext {
        trace_id: c.u128()?,
        span_id: c.u64()?,
        parent_span_id: c.u64()?,
    };
    let method_len = c.u16()? as usize;
    if method_len > MAX_METHOD_LEN {
        return Err(WireError::InvalidMethod("method longer than 1024 bytes"));
    }
    let method = std::str::from_utf8(c.take(method_len)?)
        .map_err(|_| WireError::InvalidMethod("method is not UTF-8"))?
        .to_owned();
    if kind == MessageKind::Request && method.is_empty() {
        return Err(WireError::InvalidMethod("request with empty method"));
    }
    let field_count = c.u16()? as usize;
    let mut fields = Vec::with_capacity(field_count.min(64));
    let mut seen = [false; 256];
    for _ in 0..field_count {
        let tag = c.u8()?;
        if std::mem::replace(&mut seen[tag as usize], true) {
            return Err(WireError::DuplicateTag(tag));
        }
        let len = c.u32()? as usize;
        let value = c.take(len)?.to_vec();
        fields.push(Field { tag, value });
    }
    let rest = payload.len() - c.pos;
    if rest != 0 {
        return Err(WireError::TrailingBytes(rest));
    }
    Ok(RpcMessage {
        kind,
        context,
        method,
        fields,
    })
}

/// Outcome of reading one frame from a stream.
pub enum ReadFrame {
    /// Payload bytes plus the clock reading taken once the length prefix arrived.
    Frame { payload: Vec<u8>, started_ns: u64 },
    Eof,
}

/// Reads one length-prefixed payload. Blocks until the prefix arrives; the
/// returned `started_ns` marks the end of idle waiting.
pub fn read_frame(r: &mut impl Read, max_frame: usize) -> io::Result<ReadFrame> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(ReadFrame::Eof),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    let started_ns = crate::clock::now_ns();
    let len = u32::from_be_bytes(prefix) as usize;
    if len > max_frame {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            WireError::OversizeFrame {
                size: len,
                max: max_frame,
            },
        ));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(ReadFrame::Frame {
        payload,
        started_ns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ping() -> RpcMessage {
        RpcMessage::request(
            TraceContext {
                trace_id: 1,
                span_id: 1,
                parent_span_id: 0,
            },
            "Ping",
            vec![],
        )
    }

    #[test]
    fn golden_ping_frame() {
        let frame = encode_frame(&ping()).unwrap();
        let mut expected = vec![0x00, 0x00, 0x00, 0x2A, 0x01, 0x00];
        expected.extend_from_slice(&1u128.to_be_bytes());
        expected.extend_from_slice(&1u64.to_be_bytes());
        expected.extend_from_slice(&0u64.to_be_bytes());
        expected.extend_from_slice(&[0x00, 0x04, 0x50, 0x69, 0x6E, 0x67, 0x00, 0x00]);
        assert_eq!(frame, expected);
        assert_eq!(frame.len(), 4 + 42);
        assert_eq!(decode_frame(&frame).unwrap(), ping());
    }

    #[test]
    fn truncated_and_trailing() {
        let mut f = vec![0, 0, 0, 100];
        f.extend(std::iter::repeat(0u8).take(50));
        assert!(matches!(decode_frame(&f), Err(WireError::Truncated { .. })));

        // One extra byte inside the declared length.
        let mut frame = encode_frame(&ping()).unwrap();
        frame.push(0xFF);
        let len = (frame.len() - 4) as u32;
        frame[..4].copy_from_slice(&len.to_be_bytes());
        assert_eq!(decode_frame(&frame), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn rejects_bad_header_bytes() {
        let mut frame = encode_frame(&ping()).unwrap();
        frame[4] = 0x02;
        assert_eq!(decode_frame(&frame), Err(WireError::BadVersion(2)));
        let mut frame = encode_frame(&ping()).unwrap();
        frame[5] = 7;
        assert_eq!(decode_frame(&frame), Err(WireError::BadKind(7)));
    }

    #[test]
    fn duplicate_tags_rejected_both_ways() {
        let mut m = ping();
        m.fields = vec![Field::new(3, b"a".to_vec()), Field::new(3, b"b".to_vec())];
        assert_eq!(encode_frame(&m), Err(WireError::DuplicateTag(3)));
        m.fields.pop();
        let mut frame = encode_frame(&m).unwrap();
        // Append a second copy of the field and bump the counts.
        let field = [3u8, 0, 0, 0, 1, b'b'];
        frame.extend_from_slice(&field);
        let n = frame.len();
        let count_pos = n - field.len() - 6 - 2;
        frame[count_pos..count_pos + 2].copy_from_slice(&2u16.to_be_bytes());
        let len = (n - 4) as u32;
        frame[..4].copy_from_slice(&len.to_be_bytes());
        assert_eq!(decode_frame(&frame), Err(WireError::DuplicateTag(3)));
    }

    #[test]
    fn oversize_is_an_error_not_a_truncation() {
        let mut m = ping();
        m.fields = vec![Field::new(0, vec![0u8; 2048])];
        assert!(matches!(
            encode_frame_with(&m, 1024),
            Err(WireError::OversizeFrame { .. })
        ));
        assert!(encode_frame_with(&m, 4096).is_ok());
    }

    #[test]
    fn empty_method_only_allowed_on_responses() {
        let mut m = ping();
        m.method.clear();
        assert!(matches!(encode_frame(&m), Err(WireError::InvalidMethod(_))));
        let r = RpcMessage::response(m.context, vec![]);
        assert_eq!(decode_frame(&encode_frame(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn child_context_lineage() {
        let ids = IdSource::with_seed(42);
        let parent = TraceContext {
            trace_id: 7,
            span_id: 5,
            parent_span_id: 0,
        };
        let c1 = child_context(&parent, &ids);
        assert_eq!(c1.trace_id, 7);
        assert_eq!(c1.parent_span_id, 5);
        assert_ne!(c1.span_id, 0);
        assert_ne!(c1.span_id, 5);
        let c3 = c1.child(&ids).child(&ids);
        assert_eq!(c3.trace_id, 7);
    }

    #[test]
    fn million_span_ids_are_distinct() {
        let ids = IdSource::with_seed(0xDEAD_BEEF);
        let mut all: Vec<u64> = (0..1_000_000).map(|_| ids.next_span_id()).collect();
        assert!(all.iter().all(|&id| id != 0));
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 1_000_000);
    }

    #[test]
    fn read_frame_reports_eof_and_payload() {
        let frame = encode_frame(&ping()).unwrap();
        let mut r = io::Cursor::new(frame.clone());
        match read_frame(&mut r, DEFAULT_MAX_FRAME).unwrap() {
            ReadFrame::Frame { payload, .. } => assert_eq!(payload, frame[4..]),
            ReadFrame::Eof => panic!("expected a frame"),
        }
        assert!(matches!(
            read_frame(&mut r, DEFAULT_MAX_FRAME).unwrap(),
            ReadFrame::Eof
        ));
    }
}
