use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The sampling design does not carry the information required by an
    /// estimator (e.g. a zero or missing second-order inclusion probability).
    #[error("design information error: {0}")]
    Design(String),

    /// The weighted Gram matrix is singular or too ill-conditioned to solve.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// Newton step could not be computed.
    #[error("singular Jacobian in solver")]
    SingularJacobian,

    /// The requested Jacobian strategy does not apply to this statistic.
    #[error("unsupported Jacobian strategy: {0}")]
    UnsupportedJacobian(&'static str),

    /// A superpopulation model could not be built from its specification.
    #[error("model construction error: {0}")]
    Construction(String),

    /// A numeric routine failed to converge or produced non-finite output.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A configuration file or input table failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
