//! Accuracy, cost and timing measurements.

mod flops;
mod latency;
mod log;
mod pck;

pub use flops::{flops_report, matching_macs, FlopsReport, LayerSpec, MatchingComparison, ModelSpec, FLOPS_UNIT};
pub use latency::{benchmark_latency, LatencySummary};
pub use log::{LogRecord, MetricsLog};
pub use pck::{pck_score, MetricConfig, PckAccumulator, PckReport, Reference};
