//! Configuration-driven experiment runner for the PDFP solver family:
//! multi-seed repetitions, reference caching, CSV traces and summaries.

pub mod config;
pub mod runner;

pub use config::{parse_config, ExperimentConfig};
pub use runner::{build_problem, run_experiment, validate_all, CliError, ExperimentSummary};
