//! Configuration, persistence and experiment drivers behind the `gtmpc` binary.

pub mod commands;
pub mod compare;
pub mod config;

pub use commands::Context;
pub use config::RunConfig;
