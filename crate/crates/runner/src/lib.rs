//! Experiment orchestration for the collusion laboratory: configuration,
//! seeded parallel sweeps, persistence, audits and reports.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod results;
pub mod sweep;

pub use config::{ExperimentConfig, Preset, ResolvedConfig};
pub use error::{Result, RunnerError};
pub use sweep::{run_sweep, ExecOptions, SweepOutcome};
