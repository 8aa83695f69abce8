//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the risk engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A regression or factorisation has insufficient rank.
    #[error("rank error: {0}")]
    Rank(String),

    /// A matrix that must be invertible (or positive definite) is not.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Not enough historical observations for the requested window.
    #[error("insufficient history: required {required}, available {available}")]
    InsufficientHistory { required: usize, available: usize },

    /// An iterative routine failed to converge.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Inputs are degenerate for the requested statistic.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Floating-point breakdown (NaN, unexpected negative variance, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed input data, with file/row context where available.
    #[error("parse error ({context}, row {row}): {message}")]
    Parse {
        context: String,
        row: usize,
        message: String,
    },

    /// Generic invalid input.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
