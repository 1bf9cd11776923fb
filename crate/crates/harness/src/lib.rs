//! Experiment runner for delay-aware multi-agent communication: training
//! runs with learning curves, parameter sweeps, policy-gap matrices and
//! zero-shot evaluation across delay difficulties.

pub mod cli;
pub mod config;
pub mod error;
pub mod gap;
pub mod output;
pub mod run;
pub mod sweep;
pub mod zero_shot;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
