use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("polynomial is not homogeneous of degree {0}")]
    NotHomogeneous(u32),
    #[error("polynomial is not harmonic")]
    NotHarmonic,
    #[error("polynomial is zero")]
    ZeroPolynomial,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("identity violated: {0}")]
    IdentityViolated(String),
    #[error("expansion has vanishing height at the requested point")]
    VanishingHeight,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
