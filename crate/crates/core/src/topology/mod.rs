//! Service graph description, validation, and deployment.

mod config;
mod launch;
mod validate;

pub use config::{
    parse_topology, Edge, EdgeMode, ParseError, ParseErrorKind, Role, ServiceSpec, ServiceTopology,
};
pub use launch::{
    launch, parse_summary_line, probe_health, serve, summary_line, with_free_ports, Deployment,
    DeploymentHandle, DeploymentSummary, LaunchError, LaunchOptions, Runner, ServeTarget,
    DEFAULT_GRACE, DEFAULT_READINESS_TIMEOUT,
};
pub use validate::{has_cycle, validate, Violation};

/// The default movie-streaming topology shipped with the crate.
pub const DEFAULT_TOPOLOGY: &str = include_str!("../../topologies/movie.topo");

pub fn default_topology() -> ServiceTopology {
    parse_topology(DEFAULT_TOPOLOGY).expect("shipped topology parses")
}
