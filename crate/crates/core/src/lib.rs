//! Desk-scale movie-streaming microservices benchmark.
//!
//! Services talk over a small length-prefixed RPC protocol ([`wire`], [`rpc`]),
//! every RPC is traced ([`trace`]), and the [`loadgen`] and [`analysis`]
//! modules turn span logs into latency curves and per-service breakdowns.

pub mod analysis;
pub mod clock;
pub mod loadgen;
pub mod rpc;
pub mod services;
pub mod topology;
pub mod trace;
pub mod wire;
