use thiserror::Error;

/// Errors produced by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: grids support N = 1 or 2")]
    InvalidDimension(usize),
    #[error("points per axis must be even, got {0}")]
    OddPoints(usize),
    #[error("size limit: {0}")]
    SizeLimit(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("field kind mismatch: expected {expected}")]
    KindMismatch { expected: &'static str },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("model regime violation: {0}")]
    Regime(String),
    #[error("lambda = {lambda} is not below the linear threshold lambda_1 = {lambda1} (margin 1e-6)")]
    LambdaAboveThreshold { lambda: f64, lambda1: f64 },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("solver converged to a sign-changing state after {restarts} restarts")]
    Positivity { restarts: usize },
    #[error("mass maximum sits at the end of the sampled range (lambda = {lambda}); extend lambda_min")]
    MaxAtEndpoint { lambda: f64 },
    #[error("mass root leaves the sampled range: {0}")]
    RootOutOfRange(String),
    #[error("nondegeneracy lost at s = {s}: min |eig| = {min_abs_eig:e}")]
    NondegeneracyLoss { s: f64, min_abs_eig: f64 },
    #[error("unsupported state file version {0}")]
    VersionMismatch(u64),
    #[error("length mismatch: expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
