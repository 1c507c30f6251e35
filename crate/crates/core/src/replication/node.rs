//! A replica as a deterministic state machine.
//!
//! The node never touches the network, disk or wall clock. Callers feed it
//! clock readings through [`Node::tick`], peer messages through
//! [`Node::step`] and client requests through [`Node::handle`], then ship
//! the returned messages. The same type runs under the TCP runtime and under
//! the in-process simulator.
//!
//! Replication is leader based. Entries are applied to the key-value state as
//! soon as they are appended, and commit only advances at a signature entry
//! that a majority holds. Everything above the commit point can be rolled
//! back, so the node keeps a state snapshot for each uncommitted index.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::message::{LogEntry, PeerMessage};
use super::status::{node_status, StatusView, TermHistory, TxStatus};
use crate::crypto::{Certificate, NodeKeys};
use crate::error::{Error, Result};
use crate::index::{Event, HistoricalIndex};
use crate::kv::{ExecContext, KvState};
use crate::ledger::{authorize_governance, GovernanceRecord, LedgerEntry, MerkleTree, SignatureEntry, TxEntry};
use crate::proto::{Request, Response, ResponseHeader};
use crate::receipt::{claims_digest, Receipt};
use crate::types::{LogIndex, Millis, NodeId, Revision, Term, TxId};

#[derive(Clone, Debug)]
pub struct NodeOptions {
    pub id: NodeId,
    /// Every other member of the cluster.
    pub peers: Vec<NodeId>,
    pub keys: NodeKeys,
    pub service_cert: Certificate,
    pub ledger_secret: [u8; 32],
    pub signature_interval: Millis,
    pub heartbeat_interval: Millis,
    /// Election timeout is drawn uniformly from this closed range.
    pub election_timeout: (Millis, Millis),
    /// Maximum entries per append message.
    pub batch_max: usize,
    /// How long new entries may wait before being sent.
    pub batch_delay: Millis,
    /// Start elections on timeout. Scripted runs turn this off and call
    /// [`Node::campaign`] instead.
    pub auto_elect: bool,
    pub seed: u64,
}

impl NodeOptions {
    pub fn new(id: NodeId, peers: Vec<NodeId>, keys: NodeKeys, service_cert: Certificate, ledger_secret: [u8; 32]) -> Self {
        NodeOptions {
            id,
            peers,
            keys,
            service_cert,
            ledger_secret,
            signature_interval: 1000,
            heartbeat_interval: 50,
            election_timeout: (150, 300),
            batch_max: 128,
            batch_delay: 5,
            auto_elect: true,
            seed: 0,
        }
    }

    pub fn cluster_size(&self) -> usize {
        self.peers.len() + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

/// State that must survive a restart.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardState {
    pub term: Term,
    pub voted_for: Option<NodeId>,
    pub incarnation: u64,
}

/// Outcome of a client request handled by this node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handled {
    pub response: Response,
    /// Assigned ID when the request mutated the store.
    pub txid: Option<TxId>,
}

pub type Outbound = (NodeId, PeerMessage);

#[derive(Clone, Debug)]
struct Peer {
    next: LogIndex,
    matched: LogIndex,
    incarnation: u64,
    /// Send on the next flush even if no batch is due.
    urgent: bool,
}

#[derive(Clone, Copy, Debug)]
struct TermStart {
    term: Term,
    first_revision: Revision,
    index: LogIndex,
}

#[derive(Clone)]
pub struct Node {
    opts: NodeOptions,
    cluster_id: String,
    member_id: String,
    hard: HardState,
    hard_dirty: bool,
    role: Role,
    leader: Option<NodeId>,
    /// Set after a restart to the term stored at that time. A recovering
    /// node neither votes nor campaigns until it has caught up with a leader.
    recovering: Option<Term>,
    log: Vec<LogEntry>,
    commit_index: LogIndex,
    committed: TxId,
    kv: KvState,
    /// State after each index from `commit_index` upward.
    snapshots: BTreeMap<LogIndex, KvState>,
    tree: MerkleTree,
    /// Log index of each revision, `rev_index[r - 1]`.
    rev_index: Vec<LogIndex>,
    sig_indices: Vec<LogIndex>,
    term_starts: Vec<TermStart>,
    max_revision_seen: Revision,
    peers: BTreeMap<NodeId, Peer>,
    votes: BTreeSet<NodeId>,
    election_deadline: Millis,
    last_heartbeat: Millis,
    last_signature: Millis,
    pending_since: Option<Millis>,
    /// Lease clock: the leader's own clock, or the latest one heard from it.
    clock: Millis,
    index: HistoricalIndex,
    indexed: LogIndex,
    persisted: LogIndex,
    rng: ChaCha8Rng,
    outbox: Vec<Outbound>,
}

impl Node {
    pub fn new(opts: NodeOptions, now: Millis) -> Self {
        Self::boot(opts, HardState::default(), None, now)
    }

    /// Bring a node back after a crash. Its log is gone; it keeps only `hard`.
    pub fn restart(opts: NodeOptions, hard: HardState, now: Millis) -> Self {
        let stored = hard.term;
        let hard = HardState {
            incarnation: hard.incarnation + 1,
            ..hard
        };
        let mut n = Self::boot(opts, hard, Some(stored), now);
        n.hard_dirty = true;
        n
    }

    fn boot(opts: NodeOptions, hard: HardState, recovering: Option<Term>, now: Millis) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ hard.incarnation.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let peers = opts
            .peers
            .iter()
            .map(|p| {
                (
                    p.clone(),
                    Peer {
                        next: 1,
                        matched: 0,
                        incarnation: 0,
                        urgent: false,
                    },
                )
            })
            .collect();
        let (lo, hi) = opts.election_timeout;
        let election_deadline = now + rng.gen_range(lo..=hi.max(lo));
        Node {
            cluster_id: opts.service_cert.key_id(),
            member_id: opts.keys.cert.key_id(),
            opts,
            hard,
            hard_dirty: false,
            role: Role::Follower,
            leader: None,
            recovering,
            log: Vec::new(),
            commit_index: 0,
            committed: TxId::GENESIS,
            kv: KvState::new(),
            snapshots: BTreeMap::from([(0, KvState::new())]),
            tree: MerkleTree::new(),
            rev_index: Vec::new(),
            sig_indices: Vec::new(),
            term_starts: Vec::new(),
            max_revision_seen: 0,
            peers,
            votes: BTreeSet::new(),
            election_deadline,
            last_heartbeat: now,
            last_signature: now,
            pending_since: None,
            clock: now,
            index: HistoricalIndex::new(),
            indexed: 0,
            persisted: 0,
            rng,
            outbox: Vec::new(),
        }
    }

    // ---- inspection ----

    pub fn id(&self) -> &NodeId {
        &self.opts.id
    }

    pub fn options(&self) -> &NodeOptions {
        &self.opts
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leader
    }

    pub fn term(&self) -> Term {
        self.hard.term
    }

    pub fn leader(&self) -> Option<&NodeId> {
        self.leader.as_ref()
    }

    pub fn is_recovering(&self) -> bool {
        self.recovering.is_some()
    }

    pub fn hard_state(&self) -> &HardState {
        &self.hard
    }

    /// Returns the hard state if it changed since the last call.
    pub fn take_hard_state(&mut self) -> Option<HardState> {
        std::mem::take(&mut self.hard_dirty).then(|| self.hard.clone())
    }

    pub fn cluster_id(&self) -> &str {
        &self.cluster_id
    }

    pub fn member_id(&self) -> &str {
        &self.member_id
    }

    pub fn last_index(&self) -> LogIndex {
        self.log.len() as LogIndex
    }

    pub fn commit_index(&self) -> LogIndex {
        self.commit_index
    }

    /// Highest committed transaction ID: the signing term and the last revision covered.
    pub fn committed(&self) -> TxId {
        self.committed
    }

    /// Revision of the latest executed transaction, committed or not.
    pub fn revision(&self) -> Revision {
        self.kv.revision()
    }

    pub fn kv(&self) -> &KvState {
        &self.kv
    }

    pub fn index(&self) -> &HistoricalIndex {
        &self.index
    }

    pub fn tree_size(&self) -> usize {
        self.tree.len()
    }

    pub fn entry(&self, index: LogIndex) -> Option<&LogEntry> {
        index.checked_sub(1).and_then(|i| self.log.get(i as usize))
    }

    /// Lease clock reading used for reads on this node.
    pub fn lease_clock(&self) -> Millis {
        self.clock
    }

    pub fn term_history(&self) -> TermHistory {
        let mut terms: Vec<TxId> = Vec::with_capacity(self.term_starts.len());
        for s in &self.term_starts {
            if terms.last().is_some_and(|t| t.revision == s.first_revision) {
                terms.pop();
            }
            terms.push(TxId::new(s.term, s.first_revision));
        }
        TermHistory::new(terms)
    }

    /// Term a committed revision was assigned in.
    pub fn committed_term_of(&self, revision: Revision) -> Option<Term> {
        if revision < 1 || revision > self.committed.revision {
            return None;
        }
        let idx = self.rev_index[revision as usize - 1];
        Some(self.log[idx as usize - 1].term)
    }

    /// Term of any revision currently in the log, committed or not.
    pub fn log_term_of(&self, revision: Revision) -> Option<Term> {
        let idx = *self.rev_index.get(usize::try_from(revision).ok()?.checked_sub(1)?)?;
        Some(self.log[idx as usize - 1].term)
    }

    pub fn tx_status(&self, txid: TxId) -> TxStatus {
        let view = StatusView {
            committed: self.committed,
            max_revision_seen: self.max_revision_seen,
            current_term: self.hard.term,
        };
        node_status(txid, &view, |r| self.committed_term_of(r))
    }

    /// Header for a response that did not mutate: both pairs are the committed ID.
    pub fn read_header(&self) -> ResponseHeader {
        self.header(None)
    }

    fn header(&self, txid: Option<TxId>) -> ResponseHeader {
        let at = txid.unwrap_or(self.committed);
        ResponseHeader {
            cluster_id: self.cluster_id.clone(),
            member_id: self.member_id.clone(),
            raft_term: at.term,
            revision: at.revision,
            committed_raft_term: self.committed.term,
            committed_revision: self.committed.revision,
        }
    }

    // ---- client requests ----

    /// Serve a request. Reads run locally on any node; anything that may
    /// mutate needs the leader and fails with `NotLeader` elsewhere.
    pub fn handle(&mut self, req: &Request, now: Millis) -> Result<Handled> {
        if req.is_read() {
            return self.read(req);
        }
        if self.role != Role::Leader {
            return Err(match &self.leader {
                Some(l) => Error::NotLeader { leader: Some(l.clone()) },
                None => Error::Unavailable("no leader is known, retry shortly".into()),
            });
        }
        if let Request::SetPublicPrefix(p) = req {
            authorize_governance(&GovernanceRecord::from(p), &self.opts.service_cert).map_err(Error::Forbidden)?;
        }
        self.clock = self.clock.max(now);
        let ctx = ExecContext::new(self.clock, self.hard.term, self.committed.revision).with_history(&self.index);
        let mut exec = self.kv.execute(req, &ctx)?;
        if exec.effects.is_empty() {
            *exec.response.header_mut() = self.header(None);
            return Ok(Handled {
                response: exec.response,
                txid: None,
            });
        }
        let txid = TxId::new(self.hard.term, self.kv.revision() + 1);
        let governance = match req {
            Request::SetPublicPrefix(p) => Some(GovernanceRecord::from(p)),
            _ => None,
        };
        let entry = TxEntry {
            txid,
            claims_digest: claims_digest(req, &exec.response),
            effects: exec.effects,
            governance,
        };
        self.append(LogEntry {
            term: self.hard.term,
            payload: LedgerEntry::Tx(entry),
        });
        self.pending_since.get_or_insert(now);
        *exec.response.header_mut() = self.header(Some(txid));
        Ok(Handled {
            response: exec.response,
            txid: Some(txid),
        })
    }

    fn read(&self, req: &Request) -> Result<Handled> {
        let ctx = ExecContext::new(self.clock, self.hard.term, self.committed.revision).with_history(&self.index);
        let mut exec = self.kv.execute(req, &ctx)?;
        debug_assert!(exec.effects.is_empty());
        *exec.response.header_mut() = self.header(None);
        Ok(Handled {
            response: exec.response,
            txid: None,
        })
    }

    /// Receipt for a committed transaction, built from the first signature after it.
    pub fn receipt(&self, txid: TxId) -> Result<Receipt> {
        match self.tx_status(txid) {
            TxStatus::Committed => {}
            TxStatus::Pending => return Err(Error::NotYetSignable(txid)),
            TxStatus::Invalid => return Err(Error::InvalidTx(txid)),
            TxStatus::Unknown => return Err(Error::NotFound(format!("transaction {txid}"))),
        }
        if txid.revision < 1 {
            return Err(Error::InvalidTx(txid));
        }
        let idx = self.rev_index[txid.revision as usize - 1];
        let pos = self.sig_indices.partition_point(|&s| s <= idx);
        let sig_idx = *self
            .sig_indices
            .get(pos)
            .filter(|&&s| s <= self.commit_index)
            .ok_or(Error::NotYetSignable(txid))?;
        let sig = self.log[sig_idx as usize - 1]
            .payload
            .as_signature()
            .expect("signature index holds a signature");
        let tx = self.log[idx as usize - 1].payload.as_tx().expect("revision index holds a transaction");
        let size = sig.covers_up_to.revision as usize;
        let proof = self
            .tree
            .proof(txid.revision as usize - 1, size)
            .ok_or_else(|| Error::Internal("no proof for a covered leaf".into()))?;
        Ok(Receipt::new(
            &sig.cert,
            tx.components(&self.opts.ledger_secret),
            &proof,
            &sig.signature,
        ))
    }

    // ---- committed output ----

    /// Feed newly committed transactions to the historical index.
    pub fn index_tick(&mut self) -> Result<Vec<Event>> {
        let mut events = Vec::new();
        while self.indexed < self.commit_index {
            let i = self.indexed as usize;
            if let LedgerEntry::Tx(tx) = &self.log[i].payload {
                events.extend(self.index.apply(tx)?);
            }
            self.indexed += 1;
        }
        Ok(events)
    }

    /// Committed entries not yet handed out for persistence.
    pub fn take_committed(&mut self) -> Vec<LedgerEntry> {
        let out = self.log[self.persisted as usize..self.commit_index as usize]
            .iter()
            .map(|e| e.payload.clone())
            .collect();
        self.persisted = self.commit_index;
        out
    }

    // ---- log maintenance ----

    fn append(&mut self, entry: LogEntry) {
        let idx = self.last_index() + 1;
        let first_revision = match &entry.payload {
            LedgerEntry::Tx(tx) => {
                debug_assert_eq!(tx.txid.revision, self.kv.revision() + 1);
                self.kv.apply(&tx.effects, tx.txid);
                self.tree.append(tx.components(&self.opts.ledger_secret).leaf());
                self.rev_index.push(idx);
                self.max_revision_seen = self.max_revision_seen.max(tx.txid.revision);
                tx.txid.revision
            }
            LedgerEntry::Signature(sig) => {
                self.sig_indices.push(idx);
                sig.covers_up_to.revision + 1
            }
        };
        if self.term_starts.last().is_none_or(|s| entry.term > s.term) {
            self.term_starts.push(TermStart {
                term: entry.term,
                first_revision,
                index: idx,
            });
        }
        self.log.push(entry);
        self.snapshots.insert(idx, self.kv.clone());
    }

    /// Drop entries from `from` onward and restore the state before them.
    fn truncate(&mut self, from: LogIndex) {
        assert!(from > self.commit_index, "truncating committed entry {from}");
        if from > self.last_index() {
            return;
        }
        self.log.truncate(from as usize - 1);
        self.snapshots.split_off(&from);
        self.kv = self.snapshots.get(&(from - 1)).expect("snapshot above commit").clone();
        while self.rev_index.last().is_some_and(|&i| i >= from) {
            self.rev_index.pop();
        }
        self.tree.truncate(self.rev_index.len());
        while self.sig_indices.last().is_some_and(|&i| i >= from) {
            self.sig_indices.pop();
        }
        while self.term_starts.last().is_some_and(|s| s.index >= from) {
            self.term_starts.pop();
        }
        self.persisted = self.persisted.min(from - 1);
        self.indexed = self.indexed.min(from - 1);
    }

    fn set_commit(&mut self, index: LogIndex) {
        if index <= self.commit_index {
            return;
        }
        let sig = self.log[index as usize - 1]
            .payload
            .as_signature()
            .expect("commit point is a signature");
        debug_assert!(sig.covers_up_to.revision >= self.committed.revision);
        self.committed = sig.covers_up_to;
        self.commit_index = index;
        self.snapshots = self.snapshots.split_off(&index);
    }

    fn last_signature_index(&self) -> LogIndex {
        self.sig_indices.last().copied().unwrap_or(0)
    }

    fn term_at(&self, index: LogIndex) -> Term {
        if index == 0 {
            0
        } else {
            self.log[index as usize - 1].term
        }
    }

    fn majority(&self) -> usize {
        self.opts.cluster_size() / 2 + 1
    }

    // ---- timers ----

    pub fn tick(&mut self, now: Millis) -> Vec<Outbound> {
        match self.role {
            Role::Leader => {
                self.clock = self.clock.max(now);
                let signed_up_to = self
                    .sig_indices
                    .last()
                    .and_then(|&i| self.log[i as usize - 1].payload.as_signature())
                    .map_or(0, |s| s.covers_up_to.revision);
                if now - self.last_signature >= self.opts.signature_interval && self.kv.revision() > signed_up_to {
                    self.emit_signature(now);
                }
                let heartbeat = now - self.last_heartbeat >= self.opts.heartbeat_interval;
                self.flush(now, heartbeat);
            }
            Role::Follower | Role::Candidate => {
                if self.opts.auto_elect && self.recovering.is_none() && now >= self.election_deadline {
                    self.start_campaign(now);
                }
            }
        }
        std::mem::take(&mut self.outbox)
    }

    /// Sign the current tree. Leaders do this on their own schedule; exposed
    /// for tests and scripted runs.
    pub fn emit_signature(&mut self, now: Millis) {
        if self.role != Role::Leader {
            return;
        }
        let covers = TxId::new(self.hard.term, self.tree.len() as Revision);
        let sig = SignatureEntry::sign(&self.opts.keys.key, &self.opts.keys.cert, self.tree.root(), covers);
        self.append(LogEntry {
            term: self.hard.term,
            payload: LedgerEntry::Signature(sig),
        });
        self.last_signature = now;
        self.pending_since.get_or_insert(now);
        self.advance_commit();
    }

    fn flush(&mut self, now: Millis, heartbeat: bool) {
        let last = self.last_index();
        let due = self.pending_since.is_some_and(|t| now - t >= self.opts.batch_delay);
        let mut all_sent = true;
        let ids: Vec<NodeId> = self.peers.keys().cloned().collect();
        for id in ids {
            let p = &self.peers[&id];
            let pending = (last + 1).saturating_sub(p.next) as usize;
            let send = heartbeat || p.urgent || (pending > 0 && (due || pending >= self.opts.batch_max));
            if !send {
                if pending > 0 {
                    all_sent = false;
                }
                continue;
            }
            let mut rounds = 0;
            loop {
                let next = self.peers[&id].next;
                let prev_index = next - 1;
                let end = last.min(prev_index + self.opts.batch_max as LogIndex);
                let entries = self.log[prev_index as usize..end as usize].to_vec();
                let msg = PeerMessage::AppendEntries {
                    term: self.hard.term,
                    leader: self.opts.id.clone(),
                    prev_index,
                    prev_term: self.term_at(prev_index),
                    entries,
                    leader_commit: self.commit_index,
                    leader_last_index: last,
                    leader_clock: self.clock,
                };
                self.outbox.push((id.clone(), msg));
                let p = self.peers.get_mut(&id).expect("peer exists");
                p.next = end + 1;
                p.urgent = false;
                rounds += 1;
                if p.next > last || rounds >= 8 {
                    break;
                }
            }
            if self.peers[&id].next <= last {
                all_sent = false;
            }
        }
        if heartbeat {
            self.last_heartbeat = now;
        }
        if all_sent {
            self.pending_since = None;
        }
    }

    fn reset_election_timer(&mut self, now: Millis) {
        let (lo, hi) = self.opts.election_timeout;
        self.election_deadline = now + self.rng.gen_range(lo..=hi.max(lo));
    }

    /// Start an election for the next term. Ignored while recovering.
    pub fn campaign(&mut self, now: Millis) -> Vec<Outbound> {
        self.start_campaign(now);
        std::mem::take(&mut self.outbox)
    }

    fn start_campaign(&mut self, now: Millis) {
        if self.recovering.is_some() || self.role == Role::Leader {
            return;
        }
        self.hard.term += 1;
        self.hard.voted_for = Some(self.opts.id.clone());
        self.hard_dirty = true;
        self.role = Role::Candidate;
        self.leader = None;
        self.votes = BTreeSet::from([self.opts.id.clone()]);
        self.reset_election_timer(now);
        if self.votes.len() >= self.majority() {
            self.become_leader(now);
        } else {
            let msg = PeerMessage::RequestVote {
                term: self.hard.term,
                candidate: self.opts.id.clone(),
                last_index: self.last_index(),
                last_term: self.term_at(self.last_index()),
            };
            for p in self.peers.keys() {
                self.outbox.push((p.clone(), msg.clone()));
            }
        }
    }

    fn become_leader(&mut self, now: Millis) {
        self.role = Role::Leader;
        self.leader = Some(self.opts.id.clone());
        let keep = self.last_signature_index().max(self.commit_index);
        self.truncate(keep + 1);
        let next = self.last_index() + 1;
        for p in self.peers.values_mut() {
            p.next = next;
            p.matched = 0;
            p.urgent = true;
        }
        self.clock = self.clock.max(now);
        self.emit_signature(now);
        self.flush(now, true);
    }

    fn step_down(&mut self, term: Term, now: Millis) {
        if term > self.hard.term {
            self.hard.term = term;
            self.hard.voted_for = None;
            self.hard_dirty = true;
        }
        if self.role != Role::Follower {
            self.role = Role::Follower;
            self.leader = None;
        }
        self.reset_election_timer(now);
    }

    fn advance_commit(&mut self) {
        if self.role != Role::Leader {
            return;
        }
        for &idx in self.sig_indices.iter().rev() {
            if idx <= self.commit_index || self.log[idx as usize - 1].term != self.hard.term {
                break;
            }
            let acks = 1 + self.peers.values().filter(|p| p.matched >= idx).count();
            if acks >= self.majority() {
                self.set_commit(idx);
                break;
            }
        }
    }

    // ---- messages ----

    pub fn step(&mut self, from: &NodeId, msg: PeerMessage, now: Millis) -> Vec<Outbound> {
        if let Some(t) = msg.term() {
            if t > self.hard.term {
                self.step_down(t, now);
            }
        }
        match msg {
            PeerMessage::AppendEntries {
                term,
                leader,
                prev_index,
                prev_term,
                entries,
                leader_commit,
                leader_last_index,
                leader_clock,
            } => {
                let reply = self.on_append(
                    term,
                    leader,
                    prev_index,
                    prev_term,
                    entries,
                    leader_commit,
                    leader_last_index,
                    leader_clock,
                    now,
                );
                self.outbox.push((from.clone(), reply));
            }
            PeerMessage::AppendResponse {
                term,
                success,
                match_index,
                incarnation,
                hint,
            } => self.on_append_response(from, term, success, match_index, incarnation, hint),
            PeerMessage::RequestVote {
                term,
                candidate,
                last_index,
                last_term,
            } => {
                let up_to_date = (last_term, last_index) >= (self.term_at(self.last_index()), self.last_index());
                let free = self.hard.voted_for.as_ref().is_none_or(|v| *v == candidate);
                let granted = term == self.hard.term && self.recovering.is_none() && free && up_to_date;
                if granted {
                    self.hard.voted_for = Some(candidate);
                    self.hard_dirty = true;
                    self.reset_election_timer(now);
                }
                self.outbox.push((
                    from.clone(),
                    PeerMessage::VoteResponse {
                        term: self.hard.term,
                        granted,
                    },
                ));
            }
            PeerMessage::VoteResponse { term, granted } => {
                if self.role == Role::Candidate && term == self.hard.term && granted {
                    self.votes.insert(from.clone());
                    if self.votes.len() >= self.majority() {
                        self.become_leader(now);
                    }
                }
            }
            PeerMessage::Forward { .. } | PeerMessage::ForwardReply { .. } => {}
        }
        std::mem::take(&mut self.outbox)
    }

    #[allow(clippy::too_many_arguments)]
    fn on_append(
        &mut self,
        term: Term,
        leader: NodeId,
        prev_index: LogIndex,
        prev_term: Term,
        entries: Vec<LogEntry>,
        leader_commit: LogIndex,
        leader_last_index: LogIndex,
        leader_clock: Millis,
        now: Millis,
    ) -> PeerMessage {
        let fail = |node: &Self, hint: LogIndex| PeerMessage::AppendResponse {
            term: node.hard.term,
            success: false,
            match_index: 0,
            incarnation: node.hard.incarnation,
            hint,
        };
        if term < self.hard.term {
            return fail(self, self.last_index());
        }
        self.role = Role::Follower;
        self.leader = Some(leader);
        self.reset_election_timer(now);
        self.clock = self.clock.max(leader_clock);
        if prev_index > self.last_index() {
            return fail(self, self.last_index());
        }
        if self.term_at(prev_index) != prev_term {
            let bad = self.term_at(prev_index);
            let mut hint = prev_index - 1;
            while hint > self.commit_index && self.term_at(hint) == bad {
                hint -= 1;
            }
            return fail(self, hint);
        }
        let n = entries.len() as LogIndex;
        for (i, e) in entries.into_iter().enumerate() {
            let idx = prev_index + 1 + i as LogIndex;
            if idx <= self.last_index() {
                if self.term_at(idx) == e.term {
                    continue;
                }
                self.truncate(idx);
            }
            self.append(e);
        }
        let matched = prev_index + n;
        let bound = leader_commit.min(matched);
        let pos = self.sig_indices.partition_point(|&s| s <= bound);
        if let Some(&idx) = pos.checked_sub(1).and_then(|p| self.sig_indices.get(p)) {
            self.set_commit(idx);
        }
        if let Some(stored) = self.recovering {
            if term >= stored && matched >= leader_last_index {
                self.recovering = None;
            }
        }
        PeerMessage::AppendResponse {
            term: self.hard.term,
            success: true,
            match_index: matched,
            incarnation: self.hard.incarnation,
            hint: 0,
        }
    }

    fn on_append_response(
        &mut self,
        from: &NodeId,
        term: Term,
        success: bool,
        match_index: LogIndex,
        incarnation: u64,
        hint: LogIndex,
    ) {
        if self.role != Role::Leader || term != self.hard.term {
            return;
        }
        let Some(p) = self.peers.get_mut(from) else { return };
        if incarnation < p.incarnation {
            return;
        }
        if incarnation > p.incarnation {
            p.incarnation = incarnation;
            p.matched = 0;
        }
        if success {
            p.matched = p.matched.max(match_index);
            p.next = p.next.max(p.matched + 1);
            self.advance_commit();
        } else {
            let retry = (hint + 1).max(p.matched + 1);
            if retry < p.next {
                p.next = retry;
            }
            p.urgent = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::ServiceKeys;
    use crate::proto::PutRequest;

    fn single() -> Node {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let svc = ServiceKeys::generate(&mut rng, "svc");
        let keys = svc.enroll_node(&mut rng, "n0");
        let mut opts = NodeOptions::new(NodeId::new("n0"), vec![], keys, svc.service_cert.clone(), svc.ledger_secret);
        opts.auto_elect = false;
        let mut n = Node::new(opts, 0);
        n.campaign(0);
        n
    }

    fn put(n: &mut Node, k: &str, now: Millis) -> TxId {
        n.handle(&Request::Put(PutRequest::new(k, "v")), now).unwrap().txid.unwrap()
    }

    #[test]
    fn single_node_commits_at_each_signature() {
        let mut n = single();
        assert!(n.is_leader());
        assert_eq!(n.term_history(), TermHistory::new(vec![TxId::new(1, 1)]));
        assert_eq!(n.committed(), TxId::new(1, 0));
        let ids: Vec<TxId> = (0..3).map(|i| put(&mut n, &format!("k{i}"), 1)).collect();
        assert_eq!(ids, vec![TxId::new(1, 1), TxId::new(1, 2), TxId::new(1, 3)]);
        assert_eq!(n.tx_status(ids[2]), TxStatus::Pending);
        assert!(matches!(n.receipt(ids[0]), Err(Error::NotYetSignable(_))));
        n.tick(500);
        assert_eq!(n.tx_status(ids[2]), TxStatus::Pending);
        n.tick(1000);
        assert_eq!(n.committed(), TxId::new(1, 3));
        assert_eq!(n.tx_status(ids[2]), TxStatus::Committed);
        assert_eq!(n.tx_status(TxId::new(2, 2)), TxStatus::Invalid);
        assert_eq!(n.tx_status(TxId::new(1, 9)), TxStatus::Unknown);
        assert_eq!(n.index_tick().unwrap().len(), 3);
        assert_eq!(n.take_committed().len(), 5);
        assert!(n.take_committed().is_empty());
    }

    #[test]
    fn headers_follow_read_and_write_rules() {
        let mut n = single();
        put(&mut n, "a", 1);
        n.tick(1000);
        let w = n.handle(&Request::Put(PutRequest::new("a", "w")), 1001).unwrap();
        let h = w.response.header();
        assert_eq!((h.raft_term, h.revision), (1, 2));
        assert_eq!((h.committed_raft_term, h.committed_revision), (1, 1));
        let r = n
            .handle(&Request::Range(crate::proto::RangeRequest::key("a")), 1002)
            .unwrap();
        let h = r.response.header();
        assert_eq!((h.raft_term, h.revision), (1, 1));
        assert!(r.txid.is_none());
    }

    #[test]
    fn receipt_for_committed_write_verifies() {
        let mut n = single();
        let req = Request::Put(PutRequest::new("k", "v"));
        let out = n.handle(&req, 1).unwrap();
        put(&mut n, "other", 2);
        n.tick(1000);
        let txid = out.txid.unwrap();
        let receipt = n.receipt(txid).unwrap();
        let svc = n.options().service_cert.clone();
        crate::receipt::verify_receipt(&receipt, &svc, &req, &out.response).unwrap();
    }
}
