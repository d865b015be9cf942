//! Evaluation protocol: trajectory reconstruction and generalization
//! scored by variance-weighted R², direct field metrics (RMSE, cosine),
//! success-rate aggregation, and the oscillator forecasting/imputation
//! benchmarks.

pub mod demo;
pub mod r2;
pub mod report;
pub mod suite;
pub mod tasks;

pub use demo::{demo_by_name, demo_systems, DemoSystem};
pub use r2::{r2_score, R2Result};
pub use report::{EvaluationReport, PlotSeries, SystemOutcome};
pub use suite::{
    build_trial, context_mean_mse, forecast_mse, run_vdp_fhn_suite, SuiteConfig, SuiteReport,
    SuiteSummary, SuiteTask, TrialData, TrialResult,
};
pub use tasks::{
    add_observation_noise, build_context, run_generalization, run_reconstruction, success_rate,
    trajectory_from_rows, vf_metrics, Estimator, EvalCase, EvalError, EvalGridSpec, TaskScore,
    TaskSpec, VfMetrics,
};
