//! Configuration, table I/O and subcommand drivers behind the `sgd-dmft`
//! binary.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{Overrides, RunManifest};
pub use config::ExperimentConfig;
pub use table::{compare, Comparison, Table};
