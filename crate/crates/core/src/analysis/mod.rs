//! Offline trace analysis: critical paths, per-service attribution,
//! network/compute splits, and low-vs-high load comparisons.

pub mod breakdown;
pub mod critical_path;
pub mod report;

pub use breakdown::{
    aggregate_network_fraction, breakdown_from_spans, comm_compute_split, compare_loads, complete_trees,
    is_complete, per_service_breakdown, with_root_operation, AnalysisError, Breakdown, Mode, ShiftReport,
    ShiftRow, Split,
};
pub use critical_path::{critical_path, per_service, Category, PathError, PathSegment};
pub use report::{breakdown_csv, parse_breakdown_csv, shift_csv, split_csv};
