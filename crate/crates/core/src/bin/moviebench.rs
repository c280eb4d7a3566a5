use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use moviebench::analysis::{self, Mode};
use moviebench::loadgen::{
    self, curve_csv, find_knee, run_load, sweep, Arrival, KneeThresholds, LoadConfig, RequestMix, SweepCurve,
    SweepOptions, SweepPoint,
};
use moviebench::services::{generate_dataset, DatasetOptions, HostOptions};
use moviebench::topology::{
    self, launch, parse_topology, serve, summary_line, validate, Deployment, LaunchOptions, Runner, ServeTarget,
    ServiceTopology,
};
use moviebench::trace::{load_span_log, Collector};

#[derive(Parser)]
#[command(name = "moviebench", version, about = "Movie-streaming microservices benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset directory.
    Dataset(DatasetArgs),
    /// Check a topology file and print any violations.
    Validate {
        #[arg(long)]
        topology: Option<PathBuf>,
    },
    /// Run the span collector.
    Collector {
        #[arg(long, default_value = "127.0.0.1:9100")]
        listen: SocketAddr,
        #[arg(long)]
        log: PathBuf,
    },
    /// Host one service (or the monolith) until told to stop.
    Serve(ServeArgs),
    /// Launch a whole deployment and keep it up until stdin closes.
    Deploy(DeployArgs),
    /// One open-loop run.
    Loadgen {
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Open-loop runs over increasing rates.
    Sweep {
        #[command(flatten)]
        load: LoadArgs,
        /// Comma-separated, strictly increasing.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 2.0)]
        cooldown: f64,
        #[arg(long, default_value_t = 0.95)]
        knee_throughput: f64,
        #[arg(long, default_value_t = 10.0)]
        knee_p99: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace analysis over a span log.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    movies: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    users: u64,
    #[arg(long, default_value_t = 50)]
    video_mib: u64,
    #[arg(long, default_value_t = 1024)]
    chunk_kib: u64,
}

#[derive(Args)]
struct HostArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "work")]
    work_dir: PathBuf,
    #[arg(long)]
    collector: Option<SocketAddr>,
    #[arg(long)]
    no_tracing: bool,
    #[arg(long, default_value_t = 5000)]
    rpc_timeout_ms: u64,
}

impl HostArgs {
    fn options(&self) -> HostOptions {
        let mut o = HostOptions::new(&self.work_dir);
        o.dataset = self.dataset.clone();
        o.collector = self.collector;
        o.tracing = !self.no_tracing;
        o.rpc_timeout = Duration::from_millis(self.rpc_timeout_ms);
        o
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long, conflicts_with = "monolith", required_unless_present = "monolith")]
    service: Option<String>,
    #[arg(long)]
    monolith: bool,
    #[arg(long, default_value_t = 5000)]
    grace_ms: u64,
    #[command(flatten)]
    host: HostArgs,
}

#[derive(Args)]
struct DeployArgs {
    #[arg(long)]
    topology: Option<PathBuf>,
    #[arg(long)]
    monolith: bool,
    /// One process per service instead of threads of this process.
    #[arg(long)]
    processes: bool,
    #[command(flatten)]
    host: HostArgs,
}

#[derive(Args)]
struct LoadArgs {
    #[arg(long)]
    entry: SocketAddr,
    #[arg(long, default_value = "browse=0.8,review=0.15,rent=0.05")]
    mix: RequestMix,
    /// Measured seconds per run.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 5.0)]
    warmup: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "poisson")]
    arrival: Arrival,
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 4)]
    connections: usize,
    #[arg(long, default_value_t = 1000)]
    movies: u64,
    #[arg(long, default_value_t = 1000)]
    users: u64,
}

impl LoadArgs {
    fn config(&self, rate: f64) -> LoadConfig {
        LoadConfig {
            mix: self.mix,
            rate,
            duration: Duration::from_secs_f64(self.duration),
            warmup: Duration::from_secs_f64(self.warmup),
            seed: self.seed,
            arrival: self.arrival,
            timeout: Duration::from_millis(self.timeout_ms),
            connections: self.connections,
            movies: self.movies,
            users: self.users,
            rent_price: 1,
        }
    }
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Per-service share of latency.
    Breakdown {
        #[arg(long)]
        spans: PathBuf,
        #[arg(long, default_value = "")]
        label: String,
        /// Sum all server-span time instead of critical-path time.
        #[arg(long)]
        total_time: bool,
        /// Only traces whose root handled these operations.
        #[arg(long, value_delimiter = ',')]
        operations: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Network / compute / wait shares per service.
    Split {
        #[arg(long)]
        spans: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a low-load and a high-load breakdown.
    Shift {
        #[arg(long)]
        low: PathBuf,
        #[arg(long)]
        high: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Res = Result<(), Box<dyn std::error::Error>>;

fn read_topology(path: &Option<PathBuf>) -> Result<ServiceTopology, Box<dyn std::error::Error>> {
    match path {
        None => Ok(topology::default_topology()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_topology(&text).map_err(|errs| {
                errs.iter()
                    .map(|e| format!("{}:{}", p.display(), e))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into()
            })
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Res {
    match out {
        Some(p) => loadgen::report::write_text(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn wait_for_stdin_eof() {
    let mut sink = Vec::new();
    let _ = std::io::stdin().read_to_end(&mut sink);
}

fn load_spans(path: &Path) -> Result<Vec<moviebench::trace::Span>, Box<dyn std::error::Error>> {
    let loaded = load_span_log(path)?;
    for m in &loaded.malformed {
        eprintln!("{}:{}: skipped: {}", path.display(), m.line, m.reason);
    }
    Ok(loaded.spans)
}

fn run(cli: Cli) -> Res {
    match cli.cmd {
        Cmd::Dataset(a) => {
            let m = generate_dataset(
                &a.out,
                &DatasetOptions {
                    movies: a.movies,
                    seed: a.seed,
                    users: a.users,
                    video_bytes: a.video_mib << 20,
                    chunk_bytes: a.chunk_kib << 10,
                    ..DatasetOptions::default()
                },
            )?;
            println!("{} records, checksum {}", m.records, m.checksum);
        }
        Cmd::Validate { topology } => {
            let t = read_topology(&topology)?;
            let v = validate(&t);
            if !v.is_empty() {
                for x in &v {
                    eprintln!("{x}");
                }
                return Err(format!("{} violation(s)", v.len()).into());
            }
            println!("ok: {} services, {} edges", t.services.len(), t.edges.len());
        }
        Cmd::Collector { listen, log } => {
            let mut c = Collector::start(listen, &log)?;
            println!("collector listening on {}", c.addr());
            wait_for_stdin_eof();
            c.stop();
            println!("persisted {} spans ({} duplicates)", c.persisted(), c.duplicates());
        }
        Cmd::Serve(a) => {
            let t = read_topology(&a.topology)?;
            let target = match a.service {
                Some(s) => ServeTarget::Service(s),
                None => ServeTarget::Monolith,
            };
            let summary = serve(&t, &target, &a.host.options(), Duration::from_millis(a.grace_ms))?;
            println!("{}", summary_line(&summary));
        }
        Cmd::Deploy(a) => {
            let t = read_topology(&a.topology)?;
            let deployment = if a.monolith {
                Deployment::Monolith
            } else {
                Deployment::Microservices
            };
            let mut o = LaunchOptions::new(deployment, &a.host.work_dir);
            o.host = a.host.options();
            if a.processes {
                o.runner = Runner::Processes {
                    exe: std::env::current_exe()?,
                };
            }
            let mut h = launch(&t, &o)?;
            println!("entry {}", h.entry_addr());
            wait_for_stdin_eof();
            for s in h.shutdown().services {
                println!("{}", summary_line(&s));
            }
        }
        Cmd::Loadgen { load, rate, out } => {
            let r = run_load(load.entry, &load.config(rate))?;
            if !r.valid {
                eprintln!(
                    "warning: scheduler lag p99 {} us exceeds 1 ms; run is not valid",
                    r.scheduler_lag_p99_ns / 1000
                );
            }
            let curve = SweepCurve {
                points: vec![SweepPoint::from_runs(rate, vec![r])],
            };
            emit(&out, &curve_csv(&curve, KneeThresholds::default(), None))?;
        }
        Cmd::Sweep {
            load,
            rates,
            repeats,
            cooldown,
            knee_throughput,
            knee_p99,
            out,
        } => {
            let opts = SweepOptions {
                rates,
                repeats,
                cooldown: Duration::from_secs_f64(cooldown),
            };
            let curve = sweep(load.entry, &load.config(0.0), &opts)?;
            let th = KneeThresholds {
                throughput_ratio: knee_throughput,
                p99_factor: knee_p99,
            };
            let knee = find_knee(&curve, th).ok().flatten();
            emit(&out, &curve_csv(&curve, th, knee))?;
        }
        Cmd::Analyze(AnalyzeCmd::Breakdown {
            spans,
            label,
            total_time,
            operations,
            out,
        }) => {
            let spans = load_spans(&spans)?;
            let ops: Vec<&str> = operations.iter().map(String::as_str).collect();
            let mode = if total_time { Mode::TotalTime } else { Mode::CriticalPath };
            let b = analysis::breakdown_from_spans(spans, &label, mode, (!ops.is_empty()).then_some(&ops[..]))?;
            emit(&out, &analysis::breakdown_csv(&b))?;
        }
        Cmd::Analyze(AnalyzeCmd::Split { spans, out }) => {
            let spans = load_spans(&spans)?;
            let s = analysis::comm_compute_split(&spans)?;
            emit(&out, &analysis::split_csv(&s))?;
        }
        Cmd::Analyze(AnalyzeCmd::Shift { low, high, out }) => {
            let read = |p: &Path| -> Result<analysis::Breakdown, Box<dyn std::error::Error>> {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Ok(analysis::parse_breakdown_csv(&text)?)
            };
            let r = analysis::compare_loads(&read(&low)?, &read(&high)?)?;
            emit(&out, &analysis::shift_csv(&r))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
