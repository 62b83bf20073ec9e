use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or hyperparameter.
    #[error("configuration error: {0}")]
    Config(String),
    /// Two shapes that must agree do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// An operation was called in a state that violates its contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// Sampling from a buffer with no eligible data.
    #[error("empty buffer: {0}")]
    EmptyBuffer(String),
    /// A loss or gradient became NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }
}
