use std::path::PathBuf;

use crate::behavior::Behavior;
use crate::timeline::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("missing category {0}")]
    MissingCategory(Behavior),

    #[error("unknown behavior category {0:?}")]
    UnknownBehavior(String),

    #[error("invalid session {session}: {}", join_violations(.violations))]
    InvalidSession {
        session: String,
        violations: Vec<Violation>,
    },

    #[error("unknown user {user:?} in session {session}")]
    UnknownUser { session: String, user: String },

    #[error("gaussian product of an empty factor list")]
    EmptyProduct,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("user {user} in session {session} has non-positive observed duration {duration}")]
    ZeroDuration {
        session: String,
        user: String,
        duration: f64,
    },

    #[error("non-finite objective at user {user} in session {session} (section {section})")]
    NonFiniteObjective {
        session: String,
        user: String,
        section: usize,
    },

    #[error("cannot split {sessions} session(s) into non-empty train and validation sets")]
    TooFewSessions { sessions: usize },

    #[error("no users ≥ {min_duration} s")]
    NoEligibleUsers { min_duration: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("nothing to export: {0}")]
    EmptyExport(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True when the error stems from a numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteObjective { .. })
    }
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
