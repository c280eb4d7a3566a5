//! C ABI over the deterministic parts of moviebench: the wire codec, latency
//! histograms, topology parsing and validation, and span-log analysis.
//!
//! Conventions:
//! - Every fallible function returns an [`MbStatus`]; results go through out
//!   pointers. On failure a message is kept per thread, see [`mb_last_error`].
//! - Objects are opaque handles created by `*_new`/`*_parse`/`*_decode` and
//!   released by the matching `*_free`. Passing NULL to a free is a no-op.
//! - Byte buffers and strings returned to the caller are owned by it and must
//!   be released with [`mb_bytes_free`] / [`mb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::path::Path;
use std::ptr;

use moviebench::analysis::{breakdown_csv, breakdown_from_spans, comm_compute_split, split_csv, Mode};
use moviebench::loadgen::LatencyHistogram;
use moviebench::topology::{parse_topology, validate, ServiceTopology};
use moviebench::trace::{load_span_log, SpanKind};
use moviebench::wire::{decode_frame, encode_frame, Field, MessageKind, RpcMessage, TraceContext};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Wire = 3,
    Histogram = 4,
    TopologyParse = 5,
    TopologyInvalid = 6,
    Io = 7,
    Analysis = 8,
    InvalidArgument = 9,
    Panic = 10,
}

/// Kind of an RPC message.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbMessageKind {
    Request = 0,
    Response = 1,
    Error = 2,
}

/// Byte buffer owned by the caller once returned.
#[repr(C)]
#[derive(Debug)]
pub struct MbBytes {
    pub data: *mut u8,
    pub len: usize,
}

pub struct MbHistogram(LatencyHistogram);

pub struct MbMessage {
    msg: RpcMessage,
    method: CString,
}

pub struct MbTopology(ServiceTopology);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: MbStatus, msg: impl Into<String>) -> MbStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into [`MbStatus::Panic`].
fn guard(f: impl FnOnce() -> MbStatus + UnwindSafe) -> MbStatus {
    catch_unwind(f).unwrap_or_else(|_| fail(MbStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, MbStatus> {
    if p.is_null() {
        return Err(fail(MbStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MbStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], MbStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(MbStatus::NullArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(MbStatus::NullArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

fn give_bytes(v: Vec<u8>) -> MbBytes {
    let mut b = v.into_boxed_slice();
    let out = MbBytes {
        data: b.as_mut_ptr(),
        len: b.len(),
    };
    std::mem::forget(b);
    out
}

fn give_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `bytes` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mb_bytes_free(bytes: MbBytes) {
    if !bytes.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes.data, bytes.len)));
    }
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// Histograms

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mb_histogram_new(out: *mut *mut MbHistogram) -> MbStatus {
    non_null!(out);
    *out = Box::into_raw(Box::new(MbHistogram(LatencyHistogram::new())));
    MbStatus::Ok
}

/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_histogram_free(h: *mut MbHistogram) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_histogram_record(h: *mut MbHistogram, ns: u64) -> MbStatus {
    non_null!(h);
    (*h).0.record(ns);
    MbStatus::Ok
}

/// Number of recorded samples; 0 for NULL.
///
/// # Safety
/// `h` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_histogram_count(h: *const MbHistogram) -> u64 {
    h.as_ref().map_or(0, |h| h.0.count())
}

/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mb_histogram_percentile(h: *const MbHistogram, q: f64, out: *mut u64) -> MbStatus {
    non_null!(h, out);
    match (*h).0.percentile(q) {
        Ok(v) => {
            *out = v;
            MbStatus::Ok
        }
        Err(e) => fail(MbStatus::Histogram, e.to_string()),
    }
}

/// Adds every sample of `src` to `dst`.
///
/// # Safety
/// Both must be live handles.
#[no_mangle]
pub unsafe extern "C" fn mb_histogram_merge(dst: *mut MbHistogram, src: *const MbHistogram) -> MbStatus {
    non_null!(dst, src);
    if ptr::eq(dst, src) {
        let copy = (*src).0.clone();
        return match (*dst).0.merge(&copy) {
            Ok(()) => MbStatus::Ok,
            Err(e) => fail(MbStatus::Histogram, e.to_string()),
        };
    }
    match (*dst).0.merge(&(*src).0) {
        Ok(()) => MbStatus::Ok,
        Err(e) => fail(MbStatus::Histogram, e.to_string()),
    }
}

// Messages

/// New request with the given trace context and method.
///
/// # Safety
/// `method` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mb_message_new_request(
    trace_id_hi: u64,
    trace_id_lo: u64,
    span_id: u64,
    parent_span_id: u64,
    method: *const c_char,
    out: *mut *mut MbMessage,
) -> MbStatus {
    non_null!(out);
    let m = try_status!(str_arg(method, "method"));
    let ctx = TraceContext {
        trace_id: ((trace_id_hi as u128) << 64) | trace_id_lo as u128,
        span_id,
        parent_span_id,
    };
    *out = Box::into_raw(Box::new(MbMessage {
        method: CString::new(m).expect("from a C string"),
        msg: RpcMessage::request(ctx, m, vec![]),
    }));
    MbStatus::Ok
}

/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_message_free(m: *mut MbMessage) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Appends a field. Tag uniqueness is checked when encoding.
///
/// # Safety
/// `m` must be a live handle; `value` must point to `len` bytes (or be NULL with `len` 0).
#[no_mangle]
pub unsafe extern "C" fn mb_message_add_field(m: *mut MbMessage, tag: u8, value: *const u8, len: usize) -> MbStatus {
    non_null!(m);
    let v = try_status!(bytes_arg(value, len, "value"));
    (*m).msg.fields.push(Field::new(tag, v.to_vec()));
    MbStatus::Ok
}

/// Encodes a full frame, length prefix included.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mb_message_encode(m: *const MbMessage, out: *mut MbBytes) -> MbStatus {
    non_null!(m, out);
    guard(|| match encode_frame(&(*m).msg) {
        Ok(v) => {
            *out = give_bytes(v);
            MbStatus::Ok
        }
        Err(e) => fail(MbStatus::Wire, e.to_string()),
    })
}

/// Decodes one full frame.
///
/// # Safety
/// `frame` must point to `len` bytes and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mb_message_decode(frame: *const u8, len: usize, out: *mut *mut MbMessage) -> MbStatus {
    non_null!(out);
    let bytes = try_status!(bytes_arg(frame, len, "frame"));
    guard(|| match decode_frame(bytes) {
        Ok(msg) => {
            *out = Box::into_raw(Box::new(MbMessage {
                method: CString::new(msg.method.replace('\0', " ")).expect("NULs replaced"),
                msg,
            }));
            MbStatus::Ok
        }
        Err(e) => fail(MbStatus::Wire, e.to_string()),
    })
}

/// Method name, valid while the message lives. NULL for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_message_method(m: *const MbMessage) -> *const c_char {
    m.as_ref().map_or(ptr::null(), |m| m.method.as_ptr())
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_message_kind(m: *const MbMessage) -> MbMessageKind {
    match (*m).msg.kind {
        MessageKind::Request => MbMessageKind::Request,
        MessageKind::Response => MbMessageKind::Response,
        MessageKind::Error => MbMessageKind::Error,
    }
}

/// Span id of the message's trace context.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_message_span_id(m: *const MbMessage) -> u64 {
    (*m).msg.context.span_id
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_message_field_count(m: *const MbMessage) -> usize {
    (*m).msg.fields.len()
}

/// Borrows the value of field `tag`. The pointer stays valid while the
/// message lives and is not modified. Returns `InvalidArgument` when absent.
///
/// # Safety
/// `m` must be a live handle; `data` and `len` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mb_message_field(
    m: *const MbMessage,
    tag: u8,
    data: *mut *const u8,
    len: *mut usize,
) -> MbStatus {
    non_null!(m, data, len);
    match (*m).msg.field(tag) {
        Some(v) => {
            *data = v.as_ptr();
            *len = v.len();
            MbStatus::Ok
        }
        None => fail(MbStatus::InvalidArgument, format!("no field with tag {tag}")),
    }
}

// Topologies

/// Parses topology text. Syntax errors are reported together.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mb_topology_parse(text: *const c_char, out: *mut *mut MbTopology) -> MbStatus {
    non_null!(out);
    let t = try_status!(str_arg(text, "text"));
    guard(|| match parse_topology(t) {
        Ok(t) => {
            *out = Box::into_raw(Box::new(MbTopology(t)));
            MbStatus::Ok
        }
        Err(errs) => fail(
            MbStatus::TopologyParse,
            errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "),
        ),
    })
}

/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_topology_free(t: *mut MbTopology) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mb_topology_service_count(t: *const MbTopology) -> usize {
    (*t).0.services.len()
}

/// Checks structural rules. `violations` (optional) receives their number;
/// on `TopologyInvalid` the last error lists them.
///
/// # Safety
/// `t` must be a live handle; `violations` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn mb_topology_validate(t: *const MbTopology, violations: *mut usize) -> MbStatus {
    non_null!(t);
    let v = validate(&(*t).0);
    if !violations.is_null() {
        *violations = v.len();
    }
    if v.is_empty() {
        MbStatus::Ok
    } else {
        fail(
            MbStatus::TopologyInvalid,
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "),
        )
    }
}

// Analysis

/// Per-service breakdown CSV of a span log. `operations` is an optional
/// comma-separated list of root operations to keep.
///
/// # Safety
/// `path` must be a NUL-terminated string, `operations` NULL or one, and
/// `out` a valid pointer. Free the result with [`mb_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mb_breakdown_csv(
    path: *const c_char,
    operations: *const c_char,
    total_time: bool,
    out: *mut *mut c_char,
) -> MbStatus {
    non_null!(out);
    let p = try_status!(str_arg(path, "path"));
    let ops = if operations.is_null() {
        None
    } else {
        Some(try_status!(str_arg(operations, "operations")))
    };
    guard(|| {
        let loaded = match load_span_log(Path::new(p)) {
            Ok(l) => l,
            Err(e) => return fail(MbStatus::Io, format!("{p}: {e}")),
        };
        let ops: Vec<&str> = ops
            .map(|o| o.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        let mode = if total_time { Mode::TotalTime } else { Mode::CriticalPath };
        match breakdown_from_spans(loaded.spans, p, mode, (!ops.is_empty()).then_some(&ops[..])) {
            Ok(b) => {
                *out = give_string(breakdown_csv(&b));
                MbStatus::Ok
            }
            Err(e) => fail(MbStatus::Analysis, e.to_string()),
        }
    })
}

/// Network / compute / wait split CSV of a span log.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. Free
/// the result with [`mb_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mb_split_csv(path: *const c_char, out: *mut *mut c_char) -> MbStatus {
    non_null!(out);
    let p = try_status!(str_arg(path, "path"));
    guard(|| {
        let loaded = match load_span_log(Path::new(p)) {
            Ok(l) => l,
            Err(e) => return fail(MbStatus::Io, format!("{p}: {e}")),
        };
        let servers = loaded.spans.iter().filter(|s| s.kind == SpanKind::Server);
        match comm_compute_split(servers) {
            Ok(s) => {
                *out = give_string(split_csv(&s));
                MbStatus::Ok
            }
            Err(e) => fail(MbStatus::Analysis, e.to_string()),
        }
    })
}
