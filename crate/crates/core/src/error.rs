use alloc::string::String;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("annotation value {value} out of range for concept {concept} (cardinality {cardinality}) at sample {sample}")]
    ValueOutOfRange {
        sample: usize,
        concept: usize,
        value: usize,
        cardinality: usize,
    },

    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },

    #[error("need at least {required} rows, got {actual}")]
    TooFewRows { required: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cholesky factorization failed with jitter up to {jitter:e}")]
    Cholesky { jitter: f64 },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("noise variance must be positive (index {index}, value {value})")]
    NonPositiveNoise { index: usize, value: f64 },

    #[error("concept {concept} has no annotations")]
    NoAnnotations { concept: usize },

    #[error("concept {concept} has not been fitted")]
    Unfitted { concept: usize },

    #[error("score {value} at index {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("metric is undefined: {0}")]
    Degenerate(String),

    #[error("pair (sample {sample}, concept {concept}) is not pending")]
    NotPending { sample: usize, concept: usize },

    #[error("pair (sample {sample}, concept {concept}) is already annotated")]
    AlreadyAnnotated { sample: usize, concept: usize },

    #[error("experiment is not in a state that allows this ({0})")]
    InvalidPhase(String),

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
