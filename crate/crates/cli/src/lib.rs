//! Experiment harness for the stochastic energy balance solver. A TOML run
//! configuration selects one experiment, whose tables and summary are
//! written atomically to an output directory.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{parse_config, parse_config_with, ConfigError, Experiment, ExperimentKind, Overrides, RunConfig};
pub use experiments::{run_experiment, RunError};
pub use output::{emit_outputs, RunOutput, RunSummary, Table};
