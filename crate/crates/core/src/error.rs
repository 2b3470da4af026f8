use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("insufficient samples: {op} needs at least {needed}, got {got}")]
    InsufficientSamples {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("numerical error in {what}: {detail}")]
    Numerical { what: String, detail: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("data error in {}{}: {detail}", path.display(), row.map(|r| format!(" row {r}")).unwrap_or_default())]
    Data {
        path: PathBuf,
        row: Option<usize>,
        detail: String,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn numerical(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            what: what.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Json(_) | Error::Checkpoint(_) => 2,
            Error::Diverged { .. } | Error::Numerical { .. } => 3,
            Error::Io { .. } | Error::Data { .. } => 4,
            Error::Dataset(_) => 2,
            Error::EmptySequence(_) | Error::InsufficientSamples { .. } => 2,
        }
    }
}
