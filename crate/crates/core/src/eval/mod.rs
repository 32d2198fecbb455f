//! Metrics and the early-fraction sweep.

mod metrics;
mod sweep;

pub use metrics::{auc, average_precision};
pub use sweep::{
    baseline_of, early_sweep, predicate_summary, run_method, test_metrics, E2eSettings, ExperimentConfig, ItrSettings,
    Method, PredicateSummary, RunOutcome, SweepResult, SweepRow, Truncation,
};
