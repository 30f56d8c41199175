//! Experiment driver: configuration resolution and artifact emission.

pub mod config;
pub mod run;

pub use config::{ExperimentSpec, FileConfig, Kind, Overrides};
pub use run::{run_experiment, RunSummary};

/// Bumped whenever a CSV or JSON layout changes.
pub const SCHEMA_VERSION: u32 = 1;
