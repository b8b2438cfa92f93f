use thiserror::Error;

/// Errors shared across the numerical layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator is not Hermitian: max |M - M^dag| = {defect:.3e} exceeds {tol:.1e}")]
    NotHermitian { defect: f64, tol: f64 },

    #[error("operator is not idempotent: max |P^2 - P| = {defect:.3e} exceeds {tol:.1e}")]
    NotIdempotent { defect: f64, tol: f64 },

    /// Projection left (numerically) nothing of the state. Callers decide
    /// whether this means certain detection or a dead branch.
    #[error("projection annihilated the state (squared norm {norm_sq:.3e} at or below floor)")]
    AnnihilatedState { norm_sq: f64 },

    #[error("time {t} is not on the dt grid (dt = {dt}); snap is forbidden, round explicitly")]
    OffGrid { t: f64, dt: f64 },

    #[error("{0}")]
    Validation(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("check '{name}' failed: {detail}")]
    CheckFailed { name: String, detail: String },

    #[error("evaluation outside the oracle domain: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
