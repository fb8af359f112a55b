use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MsanError>;

#[derive(Debug, Error)]
pub enum MsanError {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("caption is empty after tokenization: {0:?}")]
    EmptyCaption(String),

    #[error("insufficient vocabulary: need {needed} eligible words, found {available}")]
    InsufficientVocabulary { needed: usize, available: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MsanError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MsanError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        MsanError::Dimension {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by bad input or flags rather than internal failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, MsanError::NonFinite(_))
    }
}
