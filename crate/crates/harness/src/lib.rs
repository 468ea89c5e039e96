//! Experiment driver for the `comcache_core` simulator: TOML configs, trace
//! files, result CSVs, checkpoints and the `comcache` command line.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod results;
pub mod trace_io;

pub use error::{Error, Result};
