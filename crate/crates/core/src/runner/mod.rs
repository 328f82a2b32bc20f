//! Experiment configuration, the method × ratio × repeat grid, report
//! writers and the command-line front end.
//!
//! Configs are TOML with a `schema_version` key; see the README for the
//! full set of sections and defaults.

mod cli;
mod config;
mod experiment;

pub use cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};
pub use config::{DatasetSource, ExperimentConfig, ModelSection, RequestSection, SCHEMA_VERSION};
pub use experiment::{
    aggregate, run_experiment, write_reports, Aggregate, BaseRecord, CellRecord, Failure, MeanStd, Report,
};
