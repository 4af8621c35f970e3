//! Experiment orchestration for the gate-set tomography pipeline: gate-set
//! generation, the variance and singular-value studies, reconstruction of a
//! single set and the distance benchmark, all written as CSV.

pub mod commands;
pub mod config;
mod error;
pub mod output;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use output::{Bundle, Table};
