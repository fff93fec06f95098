use thiserror::Error;

use crate::solver::SolveLog;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("node {node:?} at level {level} is outside the stencil domain: {reason}")]
    OutOfDomain {
        node: [usize; 2],
        level: usize,
        reason: &'static str,
    },

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("shape mismatch: expected {expected} samples, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("invalid exponent {value}: {reason}")]
    InvalidExponent { value: f64, reason: &'static str },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid cutoff support: {0}")]
    InvalidSupport(String),

    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),

    #[error("oracle self-verification failed: residual {residual:e} exceeds {tolerance:e} at x={x:?}, t={t}")]
    OracleVerification {
        residual: f64,
        tolerance: f64,
        x: Vec<f64>,
        t: f64,
    },

    #[error("Picard iteration did not converge at time step {step} (relative update {update:e} after {iterations} iterations)")]
    SolverFailure {
        step: usize,
        iterations: usize,
        update: f64,
        log: Box<SolveLog>,
    },

    #[error("solve at eps = {eps} failed: {source}")]
    SweepFailure {
        eps: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("linear solve broke down at time step {step}: {reason}")]
    LinearBreakdown { step: usize, reason: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("wrong regime: {0}")]
    WrongRegime(String),

    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("field file is truncated: missing {section}")]
    Truncated { section: &'static str },

    #[error("malformed field file: {0}")]
    MalformedFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn params(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
