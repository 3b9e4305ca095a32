use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("loss undefined: every point carries the ignore label")]
    UndefinedLoss,

    #[error("metric undefined: confusion matrix is empty")]
    UndefinedMetric,

    #[error("format error: {0}")]
    Format(String),

    #[error("incompatible file version {found} (expected {expected})")]
    Incompatible { found: u32, expected: u32 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable short name for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index { .. } => "index",
            Error::EmptyInput(_) => "empty_input",
            Error::Contract(_) => "contract",
            Error::Size(_) => "size",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::UndefinedLoss => "undefined_loss",
            Error::UndefinedMetric => "undefined_metric",
            Error::Format(_) => "format",
            Error::Incompatible { .. } => "incompatible",
            Error::NonFinite(_) => "non_finite",
            Error::Io(_) => "io",
        }
    }
}
