//! Configuration, records and command dispatch for the `bose` binary.

pub mod config;
pub mod error;
pub mod record;
pub mod run;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use record::{merge_chains, ExperimentRecord, SCHEMA_VERSION};
pub use run::{run, Command, Outcome, RunOptions};
