use thiserror::Error;

/// Errors surfaced by the fallible public API.
///
/// Internal tensor-shape violations are programming errors and panic with a
/// message naming the offending shapes instead of threading `Result` through
/// every arithmetic call.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (model sizes, hyper-parameters, flag values).
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (datasets, labels, queries).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite losses or gradients during optimization.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Corrupt or unsupported on-disk formats (checkpoints, containers).
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
