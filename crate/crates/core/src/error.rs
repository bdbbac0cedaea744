use thiserror::Error;

use crate::balance::InfeasibilityReport;

/// Errors raised anywhere in the pipeline.
///
/// [`Error::exit_code`] maps each variant onto the CLI exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("non-staggered path at unit {unit}, time {time}")]
    NonStaggered { unit: String, time: i64 },

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("coefficient {term} is not identified ({witness})")]
    Unidentified { term: String, witness: String },

    #[error("required coefficient {0} is missing from the fit")]
    MissingCoefficient(String),

    #[error("balance problem is infeasible: {0}")]
    Infeasible(Box<InfeasibilityReport>),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("bootstrap aborted: {failed} of {total} replicates failed (first failure: {first})")]
    BootstrapFailed { failed: usize, total: usize, first: String },

    #[error("computation failed: {0}")]
    Computation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// 2 for bad input, 3 for infeasible balance problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Schema { .. }
            | Error::NonStaggered { .. }
            | Error::EmptyGroup(_)
            | Error::Unidentified { .. }
            | Error::MissingCoefficient(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Infeasible(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
