use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{LeaseId, NodeId, Revision, TxId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the store. Serializable so they can cross the peer
/// and client wire unchanged.
#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail", rename_all = "snake_case")]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("lease {0} not found")]
    LeaseNotFound(LeaseId),
    #[error("lease {0} already exists")]
    LeaseExists(LeaseId),
    #[error("revision {requested} has been compacted (compacted at {compacted})")]
    Compacted { requested: Revision, compacted: Revision },
    #[error("revision {requested} is ahead of the available head {head}")]
    FutureRevision { requested: Revision, head: Revision },
    #[error("unimplemented: {0}")]
    Unimplemented(String),
    #[error("not the leader (leader hint: {leader:?})")]
    NotLeader { leader: Option<NodeId> },
    #[error("unavailable: {0}")]
    Unavailable(String),
    #[error("ordering violation: {0}")]
    OrderingViolation(String),
    #[error("transaction {0} is not yet covered by a signature, retry later")]
    NotYetSignable(TxId),
    #[error("transaction {0} is invalid")]
    InvalidTx(TxId),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("session broken: {0}")]
    SessionBroken(String),
    #[error("watch {0} cancelled: event buffer overflow")]
    Overflow(i64),
    #[error("codec error: {0}")]
    Codec(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Stable machine-readable code, also used as the error tag on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::LeaseNotFound(_) => "lease_not_found",
            Error::LeaseExists(_) => "lease_exists",
            Error::Compacted { .. } => "compacted",
            Error::FutureRevision { .. } => "future_revision",
            Error::Unimplemented(_) => "unimplemented",
            Error::NotLeader { .. } => "not_leader",
            Error::Unavailable(_) => "unavailable",
            Error::OrderingViolation(_) => "ordering_violation",
            Error::NotYetSignable(_) => "not_yet_signable",
            Error::InvalidTx(_) => "invalid_tx",
            Error::NotFound(_) => "not_found",
            Error::ConfigError(_) => "config_error",
            Error::Forbidden(_) => "forbidden",
            Error::SessionBroken(_) => "session_broken",
            Error::Overflow(_) => "overflow",
            Error::Codec(_) => "codec",
            Error::Io(_) => "io",
            Error::Internal(_) => "internal",
        }
    }

    /// HTTP status used by the JSON gateway.
    pub fn http_status(&self) -> u16 {
        match self {
            Error::InvalidArgument(_)
            | Error::Compacted { .. }
            | Error::FutureRevision { .. }
            | Error::Codec(_) => 400,
            Error::Forbidden(_) => 403,
            Error::LeaseNotFound(_) | Error::NotFound(_) => 404,
            Error::LeaseExists(_) => 409,
            Error::InvalidTx(_) => 410,
            Error::NotYetSignable(_) => 425,
            Error::Unimplemented(_) => 501,
            Error::NotLeader { .. }
            | Error::Unavailable(_)
            | Error::SessionBroken(_)
            | Error::Overflow(_) => 503,
            Error::OrderingViolation(_)
            | Error::ConfigError(_)
            | Error::Io(_)
            | Error::Internal(_) => 500,
        }
    }

    /// Whether a client may retry the same request later.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::NotLeader { .. }
                | Error::Unavailable(_)
                | Error::NotYetSignable(_)
                | Error::FutureRevision { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Codec(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Codec(e.to_string())
    }
}
