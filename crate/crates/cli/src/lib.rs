//! Experiment harness around `klsim-core`: configuration, parallel cell
//! execution, CSV and JSON outputs, and their post-hoc analysis.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod summary;

pub use config::{load, validate_config, ExperimentConfig, Overrides, Preset};
pub use error::{CliError, CliResult, ErrorReport, EXIT_FAILURE, EXIT_INTEGRATION, EXIT_USAGE};
pub use runner::{run_preset, write_reports, RunOptions};
pub use summary::{summarize, Summary, SUMMARY_SCHEMA};
