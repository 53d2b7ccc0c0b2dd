use thiserror::Error;

use crate::minimax::OuterRecord;
use crate::nls::Status;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model evaluation produced a non-finite value at row {row}, column {col} (parameters {params:?})")]
    ModelEvaluation {
        row: usize,
        col: usize,
        params: Vec<f64>,
    },

    #[error("residual is not finite at the starting point")]
    InvalidStart,

    #[error("weighted subproblem failed at outer iteration {iteration} with status {status}")]
    SubproblemFailed {
        iteration: usize,
        status: Status,
        /// Outer iterations completed before the failure.
        trace: Vec<OuterRecord>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
