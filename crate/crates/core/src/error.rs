use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid Hurst function: {0}")]
    InvalidHurst(String),

    #[error("truncation error: tail bound {bound:.3e} exceeds tolerance {tolerance:.3e} (M = {truncation:.3e})")]
    Truncation {
        bound: f64,
        tolerance: f64,
        truncation: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
