use thiserror::Error;

/// Contract violations raised by the domain core.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input: {context}")]
    NonFinite { context: &'static str },

    #[error("empty input: {context}")]
    Empty { context: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
