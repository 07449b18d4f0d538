//! Crate-wide error type. Every fallible public operation returns [`Result`].

use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented range or a cross-field rule.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A task was requested with an out-of-range payload length.
    #[error("task {task}: payload length {got} outside supported range {min}..={max}")]
    BadTaskLength {
        task: &'static str,
        got: usize,
        min: usize,
        max: usize,
    },

    /// A dataset line failed to parse or validate.
    #[error("dataset line {line}: {reason}")]
    Dataset { line: usize, reason: String },

    /// A sequence operation received an empty context or response.
    #[error("{0} must be non-empty")]
    EmptySequence(&'static str),

    /// A context exceeded the model's maximum supported length.
    #[error("context length {got} exceeds maximum {max}")]
    ContextOverflow { got: usize, max: usize },

    /// A token id fell outside the vocabulary.
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    /// Architecture fields are inconsistent (e.g. width not divisible by heads).
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// A checkpoint file was rejected.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// A loaded checkpoint does not match the required architecture.
    #[error("architecture mismatch: checkpoint has {found}, expected {expected}")]
    ArchitectureMismatch { found: String, expected: String },

    /// A probability ratio that must be positive was not.
    #[error("importance ratio must be positive, got {0}")]
    NonPositiveRatio(f64),

    /// A group is too small for group-relative advantages.
    #[error("group size {0} too small: need at least 2 rollouts")]
    GroupTooSmall(usize),

    /// An estimator invariant was violated (e.g. advantage used before assignment).
    #[error("objective: {0}")]
    Objective(String),

    /// Evaluation parameters are inconsistent (e.g. K exceeding sample count).
    #[error("eval: {0}")]
    Eval(String),

    /// A diagnostic computation failed (e.g. non-finite intermediate).
    #[error("analysis: {0}")]
    Analysis(String),

    /// Underlying I/O failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure outside the dataset reader.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
