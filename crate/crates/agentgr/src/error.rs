//! Crate-wide error type and result alias.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unknown {kind} {id:?} referenced in {file}")]
    UnknownId {
        kind: &'static str,
        id: String,
        file: PathBuf,
    },

    #[error("{0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} artifacts missing: {hint}")]
    MissingArtifact { stage: &'static str, hint: String },

    #[error("fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("walk count overflow at ({row}, {col})")]
    CountOverflow { row: usize, col: usize },

    #[error("backend {backend}: {msg}")]
    Backend {
        backend: String,
        msg: String,
        retryable: bool,
    },

    #[error("unparseable {what} reply: {raw:?}")]
    UnparseableReply { what: &'static str, raw: String },

    #[error("rendered prompt for {template:?} exceeds token budget {budget} after truncation")]
    PromptBudget { template: String, budget: usize },

    #[error("embedder error: {0}")]
    Embedder(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether a failed backend call may be retried with backoff.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::Backend {
                retryable: true,
                ..
            }
        )
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Backend { .. } | Error::UnparseableReply { .. } | Error::Embedder(_) => 3,
            _ => 2,
        }
    }
}
