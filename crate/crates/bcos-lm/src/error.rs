//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Numeric-domain violation (log of non-positive, division by zero, overflow).
    #[error("numeric-domain error: {0}")]
    Domain(String),

    /// Violated API contract (non-scalar loss, already-converted model, target == foil).
    #[error("contract error: {0}")]
    Contract(String),

    /// A model contains an operation that cannot be expressed as a bias-free
    /// dynamic linear map, so exact attributions are unavailable.
    #[error("explainability-contract error: {0}")]
    Explainability(String),

    /// Invalid configuration combination.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid runtime input (out-of-vocab token, overlong sequence).
    #[error("input error: {0}")]
    Input(String),

    /// Malformed checkpoint file.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Malformed JSONL line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data/format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Input(_)
            | Error::Format { .. }
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Dim(_)
            | Error::Domain(_)
            | Error::Contract(_)
            | Error::Explainability(_) => 3,
        }
    }

    /// Short machine-parsable tag used after the `ERROR:` prefix on stderr.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Dim(_) => "dimension",
            Error::Domain(_) => "numeric-domain",
            Error::Contract(_) => "contract",
            Error::Explainability(_) => "explainability-contract",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
