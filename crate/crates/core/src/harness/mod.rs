//! Experiment configuration, pipelines and persistence.

pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;

pub use config::{Construction, ExperimentConfig, Pipeline};
pub use pipeline::{run_experiment, RunOutcome, RunSummary};
pub use report::{emit_plot_data, StatisticsReport};
