use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("radius too large for nondegenerate profile (bandwidth {bandwidth:.3} < 1)")]
    DegenerateBandwidth { bandwidth: f64 },

    #[error("radius outside ellipsoid: r = {radius:e} exceeds the feasible limit {limit:e}")]
    Infeasible { radius: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("root finding failed: {0}")]
    NoConvergence(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
