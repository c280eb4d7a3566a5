//! Open-loop load generation, latency histograms, rate sweeps and knees.

pub mod histogram;
pub mod mix;
pub mod report;
pub mod run;
pub mod sweep;

pub use histogram::{HistogramConfig, HistogramError, LatencyHistogram};
pub use mix::{plan_requests, schedule, Arrival, MixError, PlannedRequest, RequestKind, RequestMix};
pub use report::{curve_csv, curve_rows, parse_curve_csv, CsvError, CurveRow, CURVE_HEADER};
pub use run::{run_load, LoadConfig, LoadError, RunResult, MAX_VALID_LAG_NS};
pub use sweep::{find_knee, find_knee_by, nearest_rank, sweep, KneeError, KneeThresholds, SweepCurve, SweepOptions, SweepPoint};
