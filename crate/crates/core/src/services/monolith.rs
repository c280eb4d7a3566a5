//! Every logical service linked into one process behind a single server.
//!
//! Calls between logical services are plain function calls into the same
//! handlers the microservices run, issued one after another on the calling
//! worker. Only the entry service is visible on the network and traced.

use std::collections::HashMap;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::backend::Backend;
use super::cache::ByteLru;
use super::compute;
use super::control::{Control, ServiceStats, Slowdown, UNKNOWN_SERVICE};
use super::ids::UniqueIds;
use super::logic::{self, Call, Env, LocalService};
use super::proto::{codes, fault};
use super::runtime::{HostOptions, ServiceError, ServiceSummary};
use super::store::LogStore;
use crate::rpc::{Fault, Handler, Reply, Request, RpcServer, ServerConfig, ServerHandle};
use crate::topology::ServiceTopology;
use crate::trace::Tracer;
use crate::wire::{Field, RpcMessage};

struct Logical {
    local: LocalService,
    cost: f64,
    slowdown: Slowdown,
    backend: Backend,
}

pub struct MonolithHost {
    services: Vec<Logical>,
    index: HashMap<String, usize>,
    entry: usize,
    tracer: Tracer,
    control: Control,
}

impl MonolithHost {
    pub fn name(&self) -> &str {
        &self.services[self.entry].local.name
    }

    pub fn slowdown(&self, service: &str) -> Option<f64> {
        self.index.get(service).map(|&i| self.services[i].slowdown.get())
    }

    pub fn stats(&self) -> ServiceStats {
        self.control.stats(&self.tracer)
    }

    /// Runs one request against logical service `name` in the calling thread.
    pub fn invoke(&self, name: &str, method: &str, fields: &[Field]) -> Reply {
        let &at = self
            .index
            .get(name)
            .ok_or_else(|| Fault::new(UNKNOWN_SERVICE, name))?;
        logic::dispatch(&mut MonoEnv { host: self, at }, method, fields)
    }
}

impl Handler for MonolithHost {
    type Worker = ();

    fn worker(&self, _index: usize) {}

    fn handle(&self, _w: &mut (), req: &Request) -> Reply {
        logic::dispatch(
            &mut MonoEnv {
                host: self,
                at: self.entry,
            },
            &req.msg.method,
            &req.msg.fields,
        )
    }

    fn admin(&self, req: &RpcMessage) -> Option<Reply> {
        self.control.admin(req, &self.tracer, |name, f| {
            if name.is_empty() {
                self.services.iter().for_each(|s| s.slowdown.set(f));
                return Ok(());
            }
            let &i = self
                .index
                .get(name)
                .ok_or_else(|| Fault::new(UNKNOWN_SERVICE, name))?;
            self.services[i].slowdown.set(f);
            Ok(())
        })
    }
}

struct MonoEnv<'a> {
    host: &'a MonolithHost,
    at: usize,
}

impl MonoEnv<'_> {
    fn here(&self) -> &Logical {
        &self.host.services[self.at]
    }
}

impl Env for MonoEnv<'_> {
    fn local(&self) -> &LocalService {
        &self.here().local
    }

    fn call(&mut self, callee: &str, method: &str, fields: Vec<Field>) -> Reply {
        let &at = self
            .host
            .index
            .get(callee)
            .ok_or_else(|| fault(codes::UNCONFIGURED, format!("no service {callee}")))?;
        logic::dispatch(&mut MonoEnv { host: self.host, at }, method, &fields)
    }

    fn call_many(&mut self, calls: Vec<Call>, _parallel: bool) -> Vec<Reply> {
        calls
            .into_iter()
            .map(|c| self.call(&c.callee, c.method, c.fields))
            .collect()
    }

    fn compute(&mut self, payload: &[u8]) -> u64 {
        let l = self.here();
        compute::synthetic_compute(payload, l.cost, l.slowdown.get())
    }

    fn compute_len(&mut self, len: usize, seed: u64) -> u64 {
        let l = self.here();
        compute::synthetic_compute_len(len, seed, l.cost, l.slowdown.get())
    }

    fn cache(&self) -> Option<&Mutex<ByteLru>> {
        self.here().backend.cache.as_ref()
    }

    fn store(&self) -> Option<&LogStore> {
        self.here().backend.store.as_ref()
    }

    fn ids(&self) -> Option<&UniqueIds> {
        self.here().backend.ids.as_ref()
    }

    fn blobs(&self) -> Option<&Path> {
        self.here().backend.blobs.as_deref()
    }
}

/// Worker and queue sizing of the monolith: the sums over all services.
pub fn monolith_provisioning(topology: &ServiceTopology) -> (usize, usize) {
    topology.services.iter().fold((0, 0), |(w, q), s| {
        (w + s.workers, q + s.queue_capacity)
    })
}

pub struct RunningMonolith {
    host: Arc<MonolithHost>,
    server: ServerHandle,
    summary: Option<ServiceSummary>,
}

impl RunningMonolith {
    pub fn start(
        topology: &ServiceTopology,
        listener: TcpListener,
        opts: &HostOptions,
    ) -> Result<RunningMonolith, ServiceError> {
        let dataset = opts.open_dataset()?;
        let mut services = Vec::new();
        let mut index = HashMap::new();
        for spec in &topology.services {
            let local = LocalService::from_topology(topology, &spec.name)
                .ok_or_else(|| ServiceError::UnknownService(spec.name.clone()))?;
            let backend = Backend::for_service(
                spec,
                local.kind,
                dataset.as_ref(),
                &opts.work_dir,
                opts.id_instance,
            )
            .map_err(|source| ServiceError::Backend {
                service: spec.name.clone(),
                source,
            })?;
            index.insert(spec.name.clone(), services.len());
            services.push(Logical {
                local,
                cost: spec.compute_cost,
                slowdown: Slowdown::new(spec.slowdown),
                backend,
            });
        }
        let entry = *index
            .get(&topology.entry)
            .ok_or_else(|| ServiceError::UnknownService(topology.entry.clone()))?;
        let name = topology.entry.clone();
        let (tracer, shipper) = opts.tracer(&name);
        let host = Arc::new(MonolithHost {
            services,
            index,
            entry,
            tracer: tracer.clone(),
            control: Control::default(),
        });
        *host.control.shipper.lock() = shipper;
        let (workers, queue) = monolith_provisioning(topology);
        let server = RpcServer::start(
            listener,
            ServerConfig::new(&name, workers, queue),
            host.clone(),
            Some(tracer),
        )
        .map_err(|source| ServiceError::Io {
            service: name.clone(),
            source,
        })?;
        let _ = host.control.server_stats.set(server.stats().clone());
        Ok(RunningMonolith {
            host,
            server,
            summary: None,
        })
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.server.addr()
    }

    pub fn host(&self) -> &Arc<MonolithHost> {
        &self.host
    }

    pub fn on_shutdown(&self, tx: crossbeam_channel::Sender<()>) {
        *self.host.control.shutdown.lock() = Some(tx);
    }

    pub fn stop(&mut self, grace: Duration) -> ServiceSummary {
        if let Some(s) = &self.summary {
            return s.clone();
        }
        let start = Instant::now();
        let outcome = self.server.stop(grace);
        let left = grace.saturating_sub(start.elapsed()).max(Duration::from_millis(500));
        self.host.control.stop_shipper(left);
        let s = ServiceSummary {
            name: self.host.name().to_owned(),
            stats: self.host.stats(),
            forced: outcome.forced,
        };
        self.summary = Some(s.clone());
        s
    }
}

impl Drop for RunningMonolith {
    fn drop(&mut self) {
        self.stop(Duration::from_secs(5));
    }
}
