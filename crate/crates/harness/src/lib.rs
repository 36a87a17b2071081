//! Experiment harness for the contextual bilevel reduction: configuration,
//! dataset ingestion, seeded trials with grid search, CSV output and the
//! verification suite behind the `csbo` binary.

pub mod config;
pub mod data;
pub mod experiment;
pub mod output;
pub mod verify;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, run_grid_search, ExperimentReport, GridReport};
pub use output::{emit_grid, emit_results};
