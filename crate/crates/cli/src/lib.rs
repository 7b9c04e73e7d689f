//! Experiment harness for stair-token conditioning: configuration, output
//! layout, experiment bodies and the `stairtoken` subcommands.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;

pub use config::ExperimentConfig;
