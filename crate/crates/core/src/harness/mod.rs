//! Cross-validation, grid search, repeated experiments and file formats.

mod cv;
mod experiment;
pub mod io;

pub use cv::{grid_search, rowwise_kfold, select_baseline_lambda1, CvCell, Fold, GridOutcome, GridSpec};
pub use experiment::{
    delta_grid, run_experiment, summarize, write_report, Chosen, EdgeSummary, ExperimentConfig, MeanCi,
    MethodMetrics, MethodSummary, RepMetrics, RepRecord, RunReport, Summary, SweepRow, SweepSummary,
    METHOD_DC_ADMM,
};
