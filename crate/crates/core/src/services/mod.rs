//! The movie application: tier state, request handlers, and the two ways of
//! hosting them (one server per service, or everything in one process).

pub mod backend;
pub mod cache;
pub mod client;
pub mod compute;
pub mod control;
pub mod dataset;
pub mod ids;
pub mod logic;
pub mod monolith;
pub mod proto;
pub mod runtime;
pub mod store;

pub use client::{ClientError, MovieClient, Rental};
pub use dataset::{generate_dataset, Dataset, DatasetError, DatasetOptions, Manifest};
pub use monolith::{monolith_provisioning, MonolithHost, RunningMonolith};
pub use runtime::{admin_call, HostOptions, RunningService, ServiceError, ServiceHost, ServiceSummary};
