//! Peer wire protocol.
//!
//! Each frame on a peer TCP connection is a little-endian `u32` length, a
//! version byte and a bincode-encoded [`Envelope`]. The length counts the
//! version byte and the body. Client requests forwarded between nodes travel
//! as JSON text inside the envelope because the client types are shaped for
//! JSON.

use bincode::Options;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::codec::bin;
use crate::ledger::LedgerEntry;
use crate::types::{LogIndex, Millis, NodeId, Term};

pub const WIRE_VERSION: u8 = 1;

/// Upper bound on a single frame, checked before allocating.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub term: Term,
    pub payload: LedgerEntry,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeerMessage {
    AppendEntries {
        term: Term,
        leader: NodeId,
        prev_index: LogIndex,
        prev_term: Term,
        entries: Vec<LogEntry>,
        leader_commit: LogIndex,
        /// Leader's last log index when the message was built.
        leader_last_index: LogIndex,
        /// Leader's lease clock; followers never run their own.
        leader_clock: Millis,
    },
    AppendResponse {
        term: Term,
        success: bool,
        /// Highest index known to match the leader, valid when `success`.
        match_index: LogIndex,
        /// Bumped on every restart of the responding node.
        incarnation: u64,
        /// On failure, the leader should retry from `hint + 1`.
        hint: LogIndex,
    },
    RequestVote {
        term: Term,
        candidate: NodeId,
        last_index: LogIndex,
        last_term: Term,
    },
    VoteResponse {
        term: Term,
        granted: bool,
    },
    /// A client request relayed to the leader.
    Forward { id: u64, request: String },
    /// JSON-encoded `Result<Response, Error>` for a forwarded request.
    ForwardReply { id: u64, result: String },
}

impl PeerMessage {
    pub fn term(&self) -> Option<Term> {
        match self {
            PeerMessage::AppendEntries { term, .. }
            | PeerMessage::AppendResponse { term, .. }
            | PeerMessage::RequestVote { term, .. }
            | PeerMessage::VoteResponse { term, .. } => Some(*term),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub from: NodeId,
    pub message: PeerMessage,
}

pub fn encode_frame(env: &Envelope) -> Vec<u8> {
    let body = bin().serialize(env).expect("envelope serializes");
    let mut out = Vec::with_capacity(body.len() + 5);
    out.extend_from_slice(&((body.len() + 1) as u32).to_le_bytes());
    out.push(WIRE_VERSION);
    out.extend_from_slice(&body);
    out
}

/// Decode the payload of one frame: the bytes after the length prefix.
pub fn decode_frame(payload: &[u8]) -> Result<Envelope> {
    let (&version, body) = payload
        .split_first()
        .ok_or_else(|| Error::Codec("empty peer frame".into()))?;
    if version != WIRE_VERSION {
        return Err(Error::Codec(format!("unsupported peer wire version {version}")));
    }
    bin().deserialize(body).map_err(|e| Error::Codec(format!("bad peer frame: {e}")))
}
