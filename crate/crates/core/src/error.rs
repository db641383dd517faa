//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The truncated Fock space cannot represent the requested object to the
    /// documented accuracy (support overflow, mass loss, interior unitarity
    /// failure).
    #[error("truncation error: {0}")]
    Truncation(String),

    /// A numerical routine failed to reach its accuracy target.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// Inputs violate a documented precondition or invariant.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Inputs are outside the validity range of the underlying model.
    #[error("validity error: {0}")]
    Validity(String),

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A frequency grid does not cover the features it must resolve.
    #[error("grid coverage error: {0}")]
    Coverage(String),

    /// The integrator step size does not resolve the fastest rate.
    #[error("step-size violation: {0}")]
    StepSize(String),

    /// An optimizer or least-squares fit failed to converge.
    #[error("fit error: {0}")]
    Fit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A statistical estimate cannot be formed (empty window, too few
    /// samples, degenerate regression).
    #[error("statistics error: {0}")]
    Statistics(String),
}
