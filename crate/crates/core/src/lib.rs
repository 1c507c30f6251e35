//! A replicated, auditable key-value store with an etcd-style API.

pub mod api;
pub mod bench;
pub mod client;
pub mod crypto;
pub mod error;
pub mod index;
pub mod kv;
pub mod lease;
pub mod ledger;
pub mod proto;
pub mod receipt;
pub mod replication;
pub mod types;
pub mod watch;

pub use error::{Error, Result};
pub use types::{Digest, LeaseId, LogIndex, Millis, NodeId, Revision, Term, TxId};
