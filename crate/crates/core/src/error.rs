use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration value does not hold.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A logit or score column contains NaN or an infinity.
    #[error("non-finite value at sample {sample} (row {row})")]
    NonFinite { sample: usize, row: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    /// Training produced a non-finite loss.
    #[error("divergence at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// A solver or computation produced an unusable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content, located by 1-based row and column.
    #[error("{path}: row {row}, column {col}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Invalid(_) => "invalid",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape { .. } => "shape",
            Error::Diverged { .. } => "diverged",
            Error::Numerical(_) => "numerical",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code for the CLI: 2 for I/O and file-format problems,
    /// 3 for validation failures (including non-finite inputs), 4 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => 2,
            Error::Invalid(_) | Error::Shape { .. } | Error::NonFinite { .. } => 3,
            Error::Numerical(_) | Error::Diverged { .. } => 4,
        }
    }
}
