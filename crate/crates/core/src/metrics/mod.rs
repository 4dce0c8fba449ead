//! Benchmark runner, reports and scenario comparison.

pub mod bench;
pub mod collector;
pub mod compare;
pub mod report;

pub use bench::{bench, run_bench, BenchConfig, BenchError, BenchRun};
pub use collector::{
    metrics_channel, Collector, ConsumedRecord, MetricsEvent, MetricsTx, SinkRecord,
};
pub use compare::{compare, Comparison};
pub use report::{LatencyStats, MetricsReport, ReportError, ReportFormat, StageStats};
