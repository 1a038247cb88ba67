//! Error types shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Malformed input: dimension mismatches, asymmetric matrices where
    /// symmetry is required, non-finite entries, degenerate systems.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A linear solve hit a singular or numerically ill-conditioned matrix.
    #[error("singular matrix (condition estimate {condition:.3e}): {context}")]
    SingularMatrix { condition: f64, context: String },

    /// A fixed-point solver ran out of iterations.
    #[error("no convergence after {iterations} iterations (last residual {residual:.3e}): {context}")]
    ConvergenceFailure {
        iterations: usize,
        residual: f64,
        context: String,
    },

    /// Privacy budget outside the validity range of the requested mechanism.
    #[error("privacy budget out of range: {0}")]
    BudgetOutOfRange(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
