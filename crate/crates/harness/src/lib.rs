//! Experiment configuration, dispatch and file output for the `reslab` CLI.

pub mod config;
pub mod grid;
pub mod output;
pub mod run;

pub use config::{Experiment, ExperimentConfig, InitKind};
pub use output::{Manifest, Record};
pub use run::{execute, run, RunOutcome};
