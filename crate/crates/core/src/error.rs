//! Error types shared across the workbench.

/// Errors surfaced by any module. The CLI maps these onto exit codes
/// (config -> 2, data/io -> 3, numeric/shape/contract -> 4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),

    /// A numeric computation produced or received non-finite values,
    /// or a quantity (mean, ratio) is undefined for the given input.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data (corpus lines, checkpoints, vocabulary files).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
