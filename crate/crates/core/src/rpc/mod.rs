//! RPC transport over TCP: a multiplexed client and a bounded-admission server.
//!
//! Requests and responses are correlated by `(trace_id, span_id)`, so one
//! connection may carry many outstanding requests.

mod client;
mod server;

pub use client::{call, ClientOptions, Completion, RpcClient, Waiter};
pub use server::{Fault, Handler, Reply, Request, RpcServer, ServerConfig, ServerHandle, ServerStats};

use std::io;
use std::net::SocketAddr;
use std::time::Duration;

use thiserror::Error;

use crate::wire::WireError;

/// Method every service answers with a single field tag 0 = `OK`.
pub const HEALTH_METHOD: &str = "Health";
/// Error code returned when the admission queue is full.
pub const SHED_CODE: &str = "Shed";
pub const UNAVAILABLE_CODE: &str = "Unavailable";

#[derive(Debug, Error)]
pub enum RpcError {
    #[error("connection refused by {0}")]
    ConnectionRefused(SocketAddr),
    #[error("call timed out after {0:?}")]
    Timeout(Duration),
    #[error("protocol error: {0}")]
    Protocol(#[from] WireError),
    #[error("connection closed")]
    ConnectionClosed,
    #[error("request is not of kind request")]
    NotARequest,
    #[error("duplicate in-flight request id")]
    DuplicateInFlight,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl RpcError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, RpcError::Timeout(_))
    }
}
