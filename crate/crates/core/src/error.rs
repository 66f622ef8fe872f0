use thiserror::Error;

use crate::csa::{ConditionDiagnostic, RunTrace};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the domain an operation requires.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed numeric input (non-finite values, wrong lengths).
    #[error("input error: {0}")]
    Input(String),

    /// Inconsistent solver or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// No iteration of the output window passed the feasibility test.
    #[error("empty index set B after {iterations} iterations (window starts at {start}); {diagnostic}")]
    EmptyFeasibleSet {
        iterations: usize,
        start: usize,
        diagnostic: ConditionDiagnostic,
        trace: Box<RunTrace>,
    },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn is_empty_feasible_set(&self) -> bool {
        matches!(self, Error::EmptyFeasibleSet { .. })
    }
}
