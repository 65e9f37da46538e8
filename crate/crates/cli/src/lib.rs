//! Front end for the `biharmonic` binary: configuration handling and the
//! `solve`, `sweep` and `compare` commands.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, Flags, OutputFormat, RunConfig};
pub use run::{execute, Command, RunError};
