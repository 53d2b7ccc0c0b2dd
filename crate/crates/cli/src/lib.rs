//! Library half of the `snls` command: dataset ingestion, the flat config
//! format, report documents and command dispatch.

pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod run;

pub use error::CliError;
pub use run::{execute, run, Command, Invocation, RunConfig};
