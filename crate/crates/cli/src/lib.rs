//! Configuration-driven runner for the `ncki` verification experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod runner;

pub use config::{parse_config, ConfigError, ExperimentConfig, ExperimentKind};
pub use runner::{run, RunError, RunSummary};
