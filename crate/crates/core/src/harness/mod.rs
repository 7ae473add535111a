//! Experiment harness: configuration, runs, sweeps, summaries and the CLI.

pub mod cli;
pub mod config;
pub mod run;
pub mod summary;
pub mod sweep;
