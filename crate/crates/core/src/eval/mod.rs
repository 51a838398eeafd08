//! Reconstruction metrics, configuration sweeps and latency benchmarks.

mod bench;
mod metrics;
mod records;
mod sweep;

pub use bench::{bench, p95_budget_ms, percentile, BenchReport, BENCH_BUDGET_ENV, DEFAULT_BUDGET_MS};
pub use metrics::{
    aggregate, compute_metrics, jitter, segment_ga, summary_line, Aggregate, Metrics, MetricsReport, TrialReport,
    BACK_JOINTS, JITTER_EPS, LEG_JOINTS, REPORT_VERSION, RE_TIMES,
};
pub use records::motion_from_records;
pub use sweep::{evaluate_trial, rank, sweep_configs, Objective, Ranking, SweepEntry, SweepResult};

#[cfg(test)]
mod tests;
