//! Experiment harness for CHFL: spec files, paired multi-method runs,
//! `μ` selection, sweeps and reports.

pub mod datasets;
pub mod experiment;
pub mod report;
pub mod spec;
pub mod summary;
pub mod sweep;

pub use experiment::{run_experiment, tune_mu, ExperimentResult, MetricsRecord, RoundRecord};
pub use spec::{DatasetRef, ExperimentSpec, MuMode};
pub use summary::{self_check, spearman, summarize, MethodSummary};
pub use sweep::{corr_split, sweep_clients, sweep_ratio, SweepResult};
