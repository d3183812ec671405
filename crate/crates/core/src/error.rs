use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("skill {0} is pruned")]
    Pruned(u32),

    #[error("cannot sample from an empty candidate set")]
    EmptyCandidates,

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("unknown world profile `{0}`")]
    UnknownProfile(String),

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("corrupt snapshot: invariant `{invariant}` violated: {detail}")]
    Corrupt { invariant: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn not_found(kind: &'static str, id: impl ToString) -> Self {
        Error::NotFound {
            kind,
            id: id.to_string(),
        }
    }

    pub(crate) fn corrupt(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::Corrupt {
            invariant,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures talking to an oracle backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    /// Deadline, connection or server-side failure. Safe to retry.
    #[error("oracle transport failure: {0}")]
    Transport(String),

    /// The backend answered, but the answer breaks the protocol contract.
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
}

impl OracleError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, OracleError::Transport(_))
    }
}
