use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),

    #[error("degenerate scale: subsample has zero variance (pass an explicit scale)")]
    DegenerateScale,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sketches were computed with different frequencies")]
    ProvenanceMismatch,

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("negligible component: beta = {0:e}")]
    NegligibleComponent(f64),

    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),

    #[error("k = {k} exceeds the {available} available samples")]
    TooFewSamples { k: usize, available: usize },

    #[error("unexpected end of file")]
    UnexpectedEof,

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
