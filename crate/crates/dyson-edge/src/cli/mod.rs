//! Command-line front end: configuration, ensemble orchestration and
//! artifact emission.

pub mod config;

pub use config::{parse_config, ConfigError, ConfigErrors, RunConfig};
pub mod run;

pub use run::{Manifest, RunContext, RunError};

/// A small configuration that exercises every stage in seconds.
pub const SMALL_CONFIG: &str = include_str!("../../configs/small.ini");
