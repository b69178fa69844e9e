//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    /// Singular Newton/linear system. Non-fatal: the solver retries with a
    /// ridge, and the learner's line search consumes it as a step-rejection.
    #[error("linear system is singular")]
    SingularSystem,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("gradient check failed to evaluate at coordinate {coord}: {source}")]
    GradCheckEval {
        coord: usize,
        #[source]
        source: Box<Error>,
    },

    /// Forward solve failed at the initial weights, before any update was
    /// accepted. Later failures are absorbed by the line search instead.
    #[error("forward solve failed at the initial weights: {0}")]
    BadInitialization(String),

    #[error("degenerate point sample: {0}")]
    DegenerateSample(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
