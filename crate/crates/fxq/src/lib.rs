//! Experiment driver for `fxq-core`: configuration, datasets, checkpoints,
//! reports and the subcommands of the `fxq` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod report;
