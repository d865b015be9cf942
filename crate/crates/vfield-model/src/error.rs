use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model configuration: {0}")]
    BadConfig(String),

    #[error("context is empty or carries no valid transition")]
    EmptyContext,

    #[error("observation times must be strictly increasing")]
    NonIncreasingTimes,

    #[error("state dimension {got} exceeds the model maximum {max}")]
    DimensionTooLarge { got: usize, max: usize },

    #[error("all context transitions are masked out")]
    AllMasked,

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint format: {0}")]
    Format(String),
}
