//! Command-line driver: experiment configuration, run stores and dataset
//! forging over the `thinkloop` core.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::{execute, Cli};
pub use config::{ExperimentConfig, PolicySpec, Resolved};
