use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EqPropError>;

#[derive(Debug, Error)]
pub enum EqPropError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("relaxation did not converge: residual {residual:e} after {iterations} iterations (tolerance {tolerance:e})")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    #[error("Hessian at the fixed point is not positive definite")]
    IndefiniteHessian,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: expected {expected}, found {found}")]
    Format { expected: String, found: String },

    #[error("truncated data: {0}")]
    Truncated(String),

    #[error("invalid data at index {index}: {message}")]
    Data { index: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl EqPropError {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        EqPropError::Dimension {
            what: what.into(),
            expected,
            actual,
        }
    }

    /// True for errors caused by floating-point blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            EqPropError::NonFinite(_)
                | EqPropError::NonConvergence { .. }
                | EqPropError::IndefiniteHessian
        )
    }
}
