#![allow(dead_code)]

pub mod diff;
pub mod gen;
pub mod oracle;

use std::path::Path;

use moviebench::services::{generate_dataset, DatasetOptions};
use moviebench::topology::{default_topology, launch, Deployment, DeploymentHandle, LaunchOptions, ServiceTopology};

/// Small dataset that keeps test runs quick: short videos, few movies.
pub fn small_dataset(dir: &Path, movies: u64, seed: u64) {
    let opts = DatasetOptions {
        movies,
        seed,
        users: 50,
        video_bytes: 256 << 10,
        chunk_bytes: 64 << 10,
        ..DatasetOptions::default()
    };
    generate_dataset(dir, &opts).expect("dataset");
}

/// Default topology on free ports with compute scaled down for speed.
pub fn fast_topology() -> ServiceTopology {
    let mut t = default_topology().with_ephemeral_ports();
    for s in &mut t.services {
        s.compute_cost /= 20.0;
    }
    t
}

pub fn launch_tasks(
    t: &ServiceTopology,
    deployment: Deployment,
    dataset: &Path,
    work: &Path,
    collector: Option<std::net::SocketAddr>,
) -> DeploymentHandle {
    let mut o = LaunchOptions::new(deployment, work);
    o.host.dataset = Some(dataset.to_owned());
    o.host.collector = collector;
    launch(t, &o).expect("launch")
}
