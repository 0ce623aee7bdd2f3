use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// CSV or spec-string parse failure. `row` counts data rows from 1 (header excluded).
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("training diverged at epoch {epoch}{}", .context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Divergence { epoch: usize, context: Option<String> },

    #[error("data error: {0}")]
    Data(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("integrity error in {}: {msg}", .file.display())]
    Integrity { file: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn integrity(file: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Integrity {
            file: file.into(),
            msg: msg.into(),
        }
    }

    /// Attach a context label (e.g. dataset index) to a divergence error.
    pub fn with_divergence_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::Divergence { epoch, .. } => Error::Divergence {
                epoch,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Integrity { .. } => 4,
            Error::Divergence { .. } => 5,
            _ => 3,
        }
    }
}
