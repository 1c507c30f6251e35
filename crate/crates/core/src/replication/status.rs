use serde::{Deserialize, Serialize};

use crate::types::{Revision, Term, TxId};

/// Life cycle of a transaction ID as seen by one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxStatus {
    /// The node has not seen this ID.
    Unknown,
    /// Executed but not yet covered by a committed signature.
    Pending,
    Committed,
    /// Can never commit.
    Invalid,
}

impl TxStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TxStatus::Committed | TxStatus::Invalid)
    }
}

/// First transaction ID of each term, in increasing order of both fields.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermHistory {
    pub terms: Vec<TxId>,
}

impl TermHistory {
    pub fn new(terms: Vec<TxId>) -> Self {
        TermHistory { terms }
    }

    /// Term in which `revision` was assigned, per this history.
    pub fn term_of(&self, revision: Revision) -> Option<Term> {
        let i = self.terms.partition_point(|t| t.revision <= revision);
        i.checked_sub(1).map(|i| self.terms[i].term)
    }

    pub fn latest_term(&self) -> Option<Term> {
        self.terms.last().map(|t| t.term)
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// What a node knows when asked about a transaction.
#[derive(Clone, Copy, Debug)]
pub struct StatusView {
    /// Committed signature term and highest committed revision.
    pub committed: TxId,
    /// Highest revision ever appended to this node's log.
    pub max_revision_seen: Revision,
    pub current_term: Term,
}

/// Status of `txid` on a node. `committed_term_of` maps a committed revision
/// to the term it was assigned in.
pub fn node_status(txid: TxId, view: &StatusView, committed_term_of: impl Fn(Revision) -> Option<Term>) -> TxStatus {
    if txid.revision <= 0 {
        return if txid == TxId::GENESIS { TxStatus::Committed } else { TxStatus::Invalid };
    }
    if txid.revision <= view.committed.revision {
        return match committed_term_of(txid.revision) {
            Some(t) if t == txid.term => TxStatus::Committed,
            Some(_) => TxStatus::Invalid,
            None => TxStatus::Unknown,
        };
    }
    if txid.term < view.committed.term {
        return TxStatus::Invalid;
    }
    if txid.revision <= view.max_revision_seen && txid.term <= view.current_term {
        TxStatus::Pending
    } else {
        TxStatus::Unknown
    }
}

/// Result of classifying a transaction without asking the node about it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalStatus {
    Known(TxStatus),
    /// The committed ID alone cannot decide; fetch the term history.
    NeedMoreInfo,
}

/// Classify `txid` from a committed ID and, optionally, the term history.
///
/// Locally a not-yet-committed ID is reported as `Pending`, since the client
/// cannot tell whether the node has seen it.
pub fn classify_local(txid: TxId, committed: TxId, history: Option<&TermHistory>) -> LocalStatus {
    use LocalStatus::*;
    if txid.revision <= 0 {
        return Known(if txid == TxId::GENESIS { TxStatus::Committed } else { TxStatus::Invalid });
    }
    if txid.revision <= committed.revision {
        return match history.and_then(|h| h.term_of(txid.revision)) {
            Some(t) if t == txid.term => Known(TxStatus::Committed),
            Some(_) => Known(TxStatus::Invalid),
            // Only the leader of `committed.term` hands out IDs in that term.
            None if txid.term == committed.term => Known(TxStatus::Committed),
            None => NeedMoreInfo,
        };
    }
    if txid.term < committed.term {
        return Known(TxStatus::Invalid);
    }
    Known(TxStatus::Pending)
}
