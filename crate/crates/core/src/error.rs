use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("cholesky factorization failed at every jitter level (trace scale {trace_scale:.3e})")]
    FactorizationFailure { trace_scale: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("observation set is empty")]
    EmptyObservation,

    #[error("optimization diverged: objective decreased for {rounds} consecutive outer rounds")]
    DivergedOptimization { rounds: usize },

    #[error("index {index} out of range for {len} output dimensions")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("need at least 2 Monte Carlo samples, got {0}")]
    InsufficientSamples(usize),

    #[error("missing dimension {0} is also marked observed")]
    OverlappingDims(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("trial {trial} (J = {num_features}) failed: {source}")]
    TrialFailed {
        trial: usize,
        num_features: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
