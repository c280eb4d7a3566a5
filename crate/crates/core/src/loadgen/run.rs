//! Open-loop runner: sends on a fixed schedule and times every request from
//! the moment it was scheduled to go out.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;

use super::histogram::LatencyHistogram;
use super::mix::{plan_requests, schedule, Arrival, PlannedRequest, RequestKind, RequestMix};
use crate::clock;
use crate::rpc::{ClientOptions, Completion, RpcClient, RpcError, Waiter, SHED_CODE};
use crate::services::client::{browse_fields, chunk_fields, rent_fields, review_fields};
use crate::services::proto::{methods, StreamManifest};
use crate::topology::probe_health;
use crate::wire::{Field, IdSource, MessageKind, RpcMessage, TraceContext};

/// p99 scheduler lag above which a run is flagged invalid.
pub const MAX_VALID_LAG_NS: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct LoadConfig {
    pub mix: RequestMix,
    pub rate: f64,
    /// Measured window, after the warm-up.
    pub duration: Duration,
    /// Sends scheduled before this offset are issued but not measured.
    pub warmup: Duration,
    pub seed: u64,
    pub arrival: Arrival,
    pub timeout: Duration,
    pub connections: usize,
    pub movies: u64,
    pub users: u64,
    pub rent_price: u64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig {
            mix: RequestMix::default(),
            rate: 100.0,
            duration: Duration::from_secs(10),
            warmup: Duration::from_secs(5),
            seed: 1,
            arrival: Arrival::Poisson,
            timeout: Duration::from_secs(10),
            connections: 4,
            movies: 1000,
            users: 1000,
            rent_price: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("entry {0} does not answer health probes")]
    EntryUnreachable(SocketAddr),
    #[error("cannot connect to entry: {0}")]
    Connect(#[from] RpcError),
    #[error("invalid load configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub offered_rate: f64,
    pub achieved_rate: f64,
    pub duration: Duration,
    /// Requests scheduled inside the measured window.
    pub scheduled: u64,
    pub ok: u64,
    pub errors: u64,
    pub timeouts: u64,
    pub shed: u64,
    /// Successful plus timed-out requests, timeouts at the timeout value.
    pub latency: LatencyHistogram,
    pub per_kind: BTreeMap<RequestKind, LatencyHistogram>,
    pub scheduler_lag_p99_ns: u64,
    pub scheduler_lag_max_ns: u64,
    /// False when the generator could not keep its own schedule.
    pub valid: bool,
    /// Successful RPCs to the entry over the whole run, warm-up included.
    /// A rent counts its authorization and each chunk.
    pub entry_rpcs_ok: u64,
    /// Entry RPCs that were sent but whose outcome was not a response
    /// (timeouts and connection failures) over the whole run.
    pub entry_rpcs_unanswered: u64,
}

impl RunResult {
    pub fn p(&self, q: f64) -> u64 {
        self.latency.percentile(q).unwrap_or(0)
    }

    /// requests scheduled = responses + errors + timeouts + shed
    pub fn conserved(&self) -> bool {
        self.scheduled == self.ok + self.errors + self.timeouts + self.shed
    }
}

#[derive(Default)]
struct Tally {
    ok: u64,
    errors: u64,
    timeouts: u64,
    shed: u64,
    latency: LatencyHistogram,
    per_kind: BTreeMap<RequestKind, LatencyHistogram>,
}

enum Outcome {
    Ok,
    Error,
    Shed,
    Timeout,
}

struct Shared {
    t0: u64,
    warmup_ns: u64,
    window_end_ns: u64,
    timeout_ns: u64,
    in_flight: AtomicUsize,
    window_completions: AtomicU64,
    entry_ok: AtomicU64,
    entry_unanswered: AtomicU64,
    rent_price: u64,
}

struct Slot {
    kind: RequestKind,
    scheduled_ns: u64,
    measured: bool,
}

struct Conn {
    client: Arc<RpcClient>,
    tally: Arc<Mutex<Tally>>,
}

fn classify(c: &Completion) -> Outcome {
    match &c.result {
        Ok(m) if m.kind == MessageKind::Response => Outcome::Ok,
        Ok(m) if m.error_code() == Some(SHED_CODE) => Outcome::Shed,
        Ok(_) => Outcome::Error,
        Err(e) if e.is_timeout() => Outcome::Timeout,
        Err(_) => Outcome::Error,
    }
}

fn finish(shared: &Shared, tally: &Mutex<Tally>, slot: &Slot, outcome: Outcome, arrived_ns: u64) {
    shared.in_flight.fetch_sub(1, Ordering::AcqRel);
    if matches!(outcome, Outcome::Ok) {
        let rel = arrived_ns.saturating_sub(shared.t0);
        if rel >= shared.warmup_ns && rel <= shared.window_end_ns {
            shared.window_completions.fetch_add(1, Ordering::Relaxed);
        }
    }
    if !slot.measured {
        return;
    }
    let mut t = tally.lock();
    let latency = match outcome {
        Outcome::Ok => {
            t.ok += 1;
            Some(arrived_ns.saturating_sub(slot.scheduled_ns))
        }
        Outcome::Timeout => {
            t.timeouts += 1;
            Some(shared.timeout_ns)
        }
        Outcome::Shed => {
            t.shed += 1;
            None
        }
        Outcome::Error => {
            t.errors += 1;
            None
        }
    };
    if let Some(ns) = latency {
        t.latency.record(ns);
        t.per_kind.entry(slot.kind).or_default().record(ns);
    }
}

fn note_entry(shared: &Shared, c: &Completion) {
    match &c.result {
        Ok(m) if m.kind == MessageKind::Response => {
            shared.entry_ok.fetch_add(1, Ordering::Relaxed);
        }
        Ok(_) => {}
        Err(_) => {
            shared.entry_unanswered.fetch_add(1, Ordering::Relaxed);
        }
    }
}

fn send(
    conn: &Arc<RpcClient>,
    method: &str,
    fields: Vec<Field>,
    deadline_ns: u64,
    done: impl FnOnce(Completion) + Send + 'static,
) {
    let req = RpcMessage::request(TraceContext::new_root(IdSource::global()), method, fields);
    let cell = Arc::new(Mutex::new(Some(done)));
    let cb = cell.clone();
    let waiter = Waiter::Callback(Box::new(move |c| {
        if let Some(f) = cb.lock().take() {
            f(c)
        }
    }));
    if let Err(e) = conn.start_call(&req, waiter, Some(deadline_ns)) {
        // The waiter was dropped unfired; report the failure directly.
        if let Some(f) = cell.lock().take() {
            let now = clock::now_ns();
            f(Completion {
                result: Err(e),
                sent_ns: now,
                arrived_ns: now,
            });
        }
    }
}

fn rent_step(
    shared: Arc<Shared>,
    conn: Arc<RpcClient>,
    tally: Arc<Mutex<Tally>>,
    slot: Arc<Slot>,
    manifest: StreamManifest,
    index: u64,
    deadline_ns: u64,
) {
    let c2 = conn.clone();
    send(
        &conn,
        methods::RENT_CHUNK,
        chunk_fields(&manifest, index),
        deadline_ns,
        move |c| {
            note_entry(&shared, &c);
            let outcome = classify(&c);
            let full = match &c.result {
                Ok(m) => m.field(0).map(|b| b.len() as u64) == Some(manifest.chunk_len(index)),
                Err(_) => false,
            };
            match outcome {
                Outcome::Ok if !full => finish(&shared, &tally, &slot, Outcome::Error, c.arrived_ns),
                Outcome::Ok if index + 1 < manifest.chunk_count => {
                    rent_step(shared, c2, tally, slot, manifest, index + 1, deadline_ns)
                }
                o => finish(&shared, &tally, &slot, o, c.arrived_ns),
            }
        },
    );
}

fn dispatch(shared: &Arc<Shared>, conn: &Conn, slot: Slot, p: &PlannedRequest) {
    let deadline = slot.scheduled_ns + shared.timeout_ns;
    let slot = Arc::new(slot);
    let (method, fields) = match p.kind {
        RequestKind::Browse => (methods::COMPOSE_PAGE, browse_fields(p.movie_id)),
        RequestKind::Review => {
            let text: Vec<u8> = (0..p.text_len).map(|j| b'a' + (j % 26) as u8).collect();
            (methods::COMPOSE_REVIEW, review_fields(p.movie_id, p.user_id, p.stars, &text))
        }
        RequestKind::Rent => (methods::USER_AUTH, rent_fields(p.user_id, p.movie_id, shared.rent_price)),
    };
    let (sh, tally, client) = (shared.clone(), conn.tally.clone(), conn.client.clone());
    let kind = p.kind;
    send(&conn.client, method, fields, deadline, move |c| {
        note_entry(&sh, &c);
        let outcome = classify(&c);
        if kind == RequestKind::Rent && matches!(outcome, Outcome::Ok) {
            let m = match &c.result {
                Ok(m) => StreamManifest::from_fields(&m.fields).ok(),
                Err(_) => None,
            };
            match m {
                Some(m) => rent_step(sh, client, tally, slot, m, 0, deadline),
                None => finish(&sh, &tally, &slot, Outcome::Error, c.arrived_ns),
            }
        } else {
            finish(&sh, &tally, &slot, outcome, c.arrived_ns);
        }
    });
}

/// Runs one open-loop experiment against `entry`.
pub fn run_load(entry: SocketAddr, cfg: &LoadConfig) -> Result<RunResult, LoadError> {
    if !(cfg.rate >= 0.0 && cfg.rate.is_finite()) {
        return Err(LoadError::InvalidConfig(format!("rate {}", cfg.rate)));
    }
    if cfg.duration.is_zero() {
        return Err(LoadError::InvalidConfig("duration must be positive".into()));
    }
    if !probe_health(entry, Instant::now() + Duration::from_secs(2)) {
        return Err(LoadError::EntryUnreachable(entry));
    }
    let total = cfg.warmup + cfg.duration;
    let offsets = schedule(cfg.rate, total, cfg.seed, cfg.arrival);
    let plan = plan_requests(offsets.len(), &cfg.mix, cfg.movies, cfg.users, cfg.seed);
    let opts = ClientOptions::default();
    let conns: Vec<Conn> = (0..cfg.connections.max(1))
        .map(|_| {
            Ok(Conn {
                client: Arc::new(RpcClient::connect(entry, &opts)?),
                tally: Arc::new(Mutex::new(Tally::default())),
            })
        })
        .collect::<Result<_, RpcError>>()?;

    let warmup_ns = cfg.warmup.as_nanos() as u64;
    // Small lead so the first sends are not already late.
    let t0 = clock::now_ns() + 20_000_000;
    let shared = Arc::new(Shared {
        t0,
        warmup_ns,
        window_end_ns: total.as_nanos() as u64,
        timeout_ns: cfg.timeout.as_nanos() as u64,
        in_flight: AtomicUsize::new(0),
        window_completions: AtomicU64::new(0),
        entry_ok: AtomicU64::new(0),
        entry_unanswered: AtomicU64::new(0),
        rent_price: cfg.rent_price,
    });

    let stop_reaper = Arc::new(AtomicBool::new(false));
    let reaper = {
        let clients: Vec<Arc<RpcClient>> = conns.iter().map(|c| c.client.clone()).collect();
        let stop = stop_reaper.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::Acquire) {
                let now = clock::now_ns();
                for c in &clients {
                    c.reap_expired(now);
                }
                thread::sleep(Duration::from_millis(2));
            }
        })
    };

    let next = AtomicUsize::new(0);
    let lags: Vec<LatencyHistogram> = thread::scope(|s| {
        let handles: Vec<_> = conns
            .iter()
            .map(|conn| {
                let (next, offsets, plan, shared) = (&next, &offsets, &plan, &shared);
                s.spawn(move || {
                    let mut lag = LatencyHistogram::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= offsets.len() {
                            return lag;
                        }
                        let at = t0 + offsets[i];
                        let now = clock::now_ns();
                        if at > now {
                            thread::sleep(Duration::from_nanos(at - now));
                        }
                        let measured = offsets[i] >= warmup_ns;
                        if measured {
                            lag.record(clock::now_ns().saturating_sub(at));
                        }
                        shared.in_flight.fetch_add(1, Ordering::AcqRel);
                        dispatch(
                            shared,
                            conn,
                            Slot {
                                kind: plan[i].kind,
                                scheduled_ns: at,
                                measured,
                            },
                            &plan[i],
                        );
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sender panicked")).collect()
    });

    // Every outstanding request has a deadline; the reaper enforces it.
    let hard_stop = Instant::now() + cfg.timeout + Duration::from_secs(2);
    while shared.in_flight.load(Ordering::Acquire) > 0 && Instant::now() < hard_stop {
        thread::sleep(Duration::from_millis(5));
    }
    stop_reaper.store(true, Ordering::Release);
    let _ = reaper.join();
    for c in &conns {
        c.client.close();
    }

    let mut tally = Tally::default();
    for c in &conns {
        let t = c.tally.lock();
        tally.ok += t.ok;
        tally.errors += t.errors;
        tally.timeouts += t.timeouts;
        tally.shed += t.shed;
        tally.latency.merge(&t.latency).expect("same config");
        for (k, h) in &t.per_kind {
            tally.per_kind.entry(*k).or_default().merge(h).expect("same config");
        }
    }
    let mut lag = LatencyHistogram::new();
    for l in &lags {
        lag.merge(l).expect("same config");
    }
    let scheduled = offsets.iter().filter(|&&o| o >= warmup_ns).count() as u64;
    let completed = shared.window_completions.load(Ordering::Relaxed).min(tally.ok);
    let achieved = if scheduled == 0 {
        0.0
    } else {
        cfg.rate * (completed as f64 / scheduled as f64).min(1.0)
    };
    let lag_p99 = lag.percentile(0.99).unwrap_or(0);
    Ok(RunResult {
        offered_rate: cfg.rate,
        achieved_rate: achieved,
        duration: cfg.duration,
        scheduled,
        ok: tally.ok,
        errors: tally.errors,
        timeouts: tally.timeouts,
        shed: tally.shed,
        latency: tally.latency,
        per_kind: tally.per_kind,
        scheduler_lag_p99_ns: lag_p99,
        scheduler_lag_max_ns: lag.max().unwrap_or(0),
        valid: lag_p99 <= MAX_VALID_LAG_NS,
        entry_rpcs_ok: shared.entry_ok.load(Ordering::Relaxed),
        entry_rpcs_unanswered: shared.entry_unanswered.load(Ordering::Relaxed),
    })
}
