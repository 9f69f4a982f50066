use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use idfree_asd_core::{MetricsError, ProtocolError, ScorerError, SimError};

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Usage,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Malformed input; `line` is 1-based within the file.
    #[error("{}{}: {message}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        file: PathBuf,
        line: Option<u64>,
        message: String,
    },
    #[error("{message}: {}", ids.join(", "))]
    IdMismatch { message: String, ids: Vec<String> },
    #[error("machine `{machine}` has no column in the scores file")]
    MissingColumn { machine: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("{0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Internal(_) => ErrorKind::Internal,
            CliError::Simulation(SimError::InvalidConfig(_))
            | CliError::Simulation(SimError::DimensionTooSmall { .. })
            | CliError::Simulation(SimError::NoSeparations)
            | CliError::Simulation(SimError::NoRepeats) => ErrorKind::Usage,
            CliError::Metrics(MetricsError::InvalidMaxFpr(_)) => ErrorKind::Usage,
            CliError::Protocol(ProtocolError::Metrics(MetricsError::InvalidMaxFpr(_))) => {
                ErrorKind::Usage
            }
            _ => ErrorKind::Data,
        }
    }

    pub fn parse(file: impl Into<PathBuf>, line: Option<u64>, message: impl Into<String>) -> Self {
        CliError::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut error = json!({
            "kind": self.kind(),
            "message": self.to_string(),
        });
        match self {
            CliError::Parse { file, line, .. } => {
                error["file"] = json!(file.display().to_string());
                if let Some(l) = line {
                    error["line"] = json!(l);
                }
            }
            CliError::IdMismatch { ids, .. } => error["ids"] = json!(ids),
            CliError::MissingColumn { machine } => error["machine"] = json!(machine),
            CliError::Protocol(ProtocolError::MissingColumn(m)) => {
                error["machine"] = json!(m.as_str())
            }
            CliError::Scorer(ScorerError::MissingFeatures(ids)) => error["ids"] = json!(ids),
            _ => {}
        }
        json!({ "error": error })
    }
}
