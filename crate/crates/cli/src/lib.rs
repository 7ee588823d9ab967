//! Command implementations behind the `chronoscale` binary.

pub mod commands;
pub mod config;

pub use commands::{ExitStatus, Options};
pub use config::{Config, ConfigError, SCHEMA_VERSION};
