use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit reports. The variants map onto the CLI's exit
/// classes: configuration and validation problems are the caller's fault,
/// everything else is a runtime failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error in document {doc_id}: {message}")]
    Validation { doc_id: String, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric-domain error: {0}")]
    Numeric(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("empty loss: every position carries the ignore marker")]
    EmptyLoss,

    #[error("input contract violated: {0}")]
    InputContract(String),

    #[error("ingestion error in {path}: invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { path: PathBuf, offset: usize },

    #[error("ingestion error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint load error: {0}")]
    Load(String),

    #[error("vocabulary fingerprint mismatch: checkpoint expects {expected}, got {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("grid search failed: {0}")]
    Search(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn validation(doc_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            doc_id: doc_id.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than by a
    /// failure while running.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Validation { .. }
                | Error::InvalidUtf8 { .. }
                | Error::Parse { .. }
                | Error::FingerprintMismatch { .. }
                | Error::InputContract(_)
        )
    }

    /// Short machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Validation { .. } => "validation",
            Error::Shape(_) => "shape",
            Error::Numeric(_) => "numeric",
            Error::Index(_) => "index",
            Error::EmptyLoss => "empty-loss",
            Error::InputContract(_) => "input-contract",
            Error::InvalidUtf8 { .. } | Error::Parse { .. } => "ingestion",
            Error::Load(_) => "load",
            Error::FingerprintMismatch { .. } => "fingerprint",
            Error::Io { .. } => "io",
            Error::Search(_) => "search",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
