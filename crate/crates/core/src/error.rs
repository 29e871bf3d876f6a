use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    /// A mixing matrix failed one of the structural checks.
    #[error("mixing matrix rejected: {0}")]
    Validation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },

    #[error("corrupt message: {0}")]
    CorruptMessage(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("schedule undefined: {0}")]
    ScheduleUndefined(String),

    #[error("insufficient decay: {0}")]
    InsufficientDecay(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
