use thiserror::Error;

/// Errors produced by model construction, linearization, and smoothing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric within tolerance ({0})")]
    NotSymmetric(&'static str),

    #[error("Cholesky factorization failed ({0})")]
    CholeskyFailed(&'static str),

    #[error("covariance is singular or badly conditioned ({0})")]
    SingularCovariance(&'static str),

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("non-finite value encountered ({0})")]
    NonFinite(&'static str),

    #[error("rank-deficient Jacobian in dense least-squares solve")]
    RankDeficient,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("target coincides with a sensor position (bearing undefined)")]
    TargetAtSensor,
}

pub type Result<T> = std::result::Result<T, Error>;
