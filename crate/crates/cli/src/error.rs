use std::path::PathBuf;

use thiserror::Error;

/// Everything that maps to exit code 2: nothing was solved, no report written.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("row {row} (line {line}), column {column}: {message}")]
    Cell {
        row: usize,
        line: usize,
        column: &'static str,
        message: String,
    },
    #[error("dataset has no data rows")]
    EmptyDataset,
    #[error(transparent)]
    Core(#[from] snls_core::Error),
}

impl CliError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
