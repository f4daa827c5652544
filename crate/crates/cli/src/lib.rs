//! Pipeline orchestration for kernel EDMD surrogate MPC experiments.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod error;
pub mod fig1;
pub mod pipeline;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
