//! Metrics and the repeated-trial, ablation and sweep harness.

mod dataset;
mod harness;
mod metrics;

pub use dataset::{kqi_labels, select_centers, EgoDataset, PreparedData};
pub use harness::{
    ablation_csv, run_ablation, run_trial, run_trials, sweep_d_state, AblationRow, MetricSummary, MetricsReport,
    SweepAxis, SweepPoint, SweepResult, TrialFailure, TrialResult,
};
pub use metrics::{accuracy, auc_ovr, binary_auc, confusion, macro_f1};
