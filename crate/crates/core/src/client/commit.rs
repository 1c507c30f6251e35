//! Waiting for acknowledged writes to commit.
//!
//! Writes are acknowledged before they commit, so a client that needs
//! durability has to find out later whether each transaction ID committed or
//! was discarded by an election. The strategies below trade the number of
//! requests against how much they can infer locally from the committed ID and
//! the term history.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Client;
use crate::error::{Error, Result};
use crate::replication::{classify_local, LocalStatus, Sim, TermHistory, TxStatus};
use crate::types::{NodeId, TxId};

const BASE_PAUSE_MS: u64 = 10;
const MAX_PAUSE_MS: u64 = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommitStrategy {
    /// Ask for the status of every ID.
    Naive,
    /// Ask only for the last ID of each term, walking back on `Invalid`.
    PollLastInTerm,
    /// Ask for the committed ID and classify locally, falling back to
    /// [`CommitStrategy::PollLastInTerm`] across term changes.
    PollLatestCommitted,
    /// Ask once for the term history together with the committed ID.
    PollWithTermHistory,
    /// Read the committed ID from response headers already received and
    /// fetch the term history once per observed term change.
    ReturnedCommitted,
}

impl CommitStrategy {
    pub const ALL: [CommitStrategy; 5] = [
        CommitStrategy::Naive,
        CommitStrategy::PollLastInTerm,
        CommitStrategy::PollLatestCommitted,
        CommitStrategy::PollWithTermHistory,
        CommitStrategy::ReturnedCommitted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommitStrategy::Naive => "naive",
            CommitStrategy::PollLastInTerm => "poll_last_in_term",
            CommitStrategy::PollLatestCommitted => "poll_latest_committed",
            CommitStrategy::PollWithTermHistory => "poll_with_term_history",
            CommitStrategy::ReturnedCommitted => "returned_committed",
        }
    }
}

impl std::str::FromStr for CommitStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CommitStrategy::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// What the waiting strategies may ask of a cluster. Every call except
/// [`CommitApi::pause`] and [`CommitApi::header_committed`] is one poll.
#[allow(async_fn_in_trait)]
pub trait CommitApi {
    async fn tx_status(&mut self, txid: TxId) -> Result<TxStatus>;
    async fn committed(&mut self) -> Result<TxId>;
    /// Term history together with the committed ID it was read at.
    async fn term_history(&mut self) -> Result<(TermHistory, TxId)>;
    /// Committed ID carried by responses the client already has, if any.
    fn header_committed(&mut self) -> Option<TxId>;
    async fn pause(&mut self, ms: u64);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WaitOutcome {
    /// Terminal status of each input ID, in input order.
    pub statuses: Vec<TxStatus>,
    /// Requests issued to the cluster.
    pub polls: usize,
}

struct Waiter<'a, A> {
    api: &'a mut A,
    polls: usize,
    pause: u64,
    waited: u64,
    budget_ms: u64,
}

impl<A: CommitApi> Waiter<'_, A> {
    /// Retry `f` while it fails with a retryable error.
    async fn call<T>(&mut self, mut f: impl AsyncFnMut(&mut A) -> Result<T>) -> Result<T> {
        loop {
            self.polls += 1;
            match f(self.api).await {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() => self.wait().await?,
                Err(e) => return Err(e),
            }
        }
    }

    async fn wait(&mut self) -> Result<()> {
        if self.waited >= self.budget_ms {
            return Err(Error::Unavailable(format!(
                "transactions still unresolved after {} ms",
                self.waited
            )));
        }
        self.api.pause(self.pause).await;
        self.waited += self.pause;
        self.pause = (self.pause * 2).min(MAX_PAUSE_MS);
        Ok(())
    }

    fn progressed(&mut self) {
        self.pause = BASE_PAUSE_MS;
    }

    async fn status(&mut self, txid: TxId) -> Result<TxStatus> {
        self.call(async |a: &mut A| a.tx_status(txid).await).await
    }

    async fn committed(&mut self) -> Result<TxId> {
        self.call(async |a: &mut A| a.committed().await).await
    }

    async fn history(&mut self) -> Result<(TermHistory, TxId)> {
        self.call(async |a: &mut A| a.term_history().await).await
    }

    /// Poll one ID until it is terminal.
    async fn settle_one(&mut self, txid: TxId) -> Result<TxStatus> {
        loop {
            let s = self.status(txid).await?;
            if s.is_terminal() {
                self.progressed();
                return Ok(s);
            }
            self.wait().await?;
        }
    }

    async fn naive(&mut self, ids: &[TxId], out: &mut [Option<TxStatus>]) -> Result<()> {
        for (i, id) in ids.iter().enumerate() {
            if out[i].is_none() {
                out[i] = Some(self.settle_one(*id).await?);
            }
        }
        Ok(())
    }

    /// Resolve the still-open IDs one term at a time from the last one back.
    async fn last_in_term(&mut self, ids: &[TxId], out: &mut [Option<TxStatus>]) -> Result<()> {
        let mut by_term: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            if out[i].is_none() {
                by_term.entry(id.term).or_default().push(i);
            }
        }
        for (_, mut group) in by_term {
            group.sort_by_key(|&i| ids[i].revision);
            // Within a term, a committed ID implies every earlier one committed
            // and an invalid ID implies every later one is invalid.
            let mut end = group.len();
            while end > 0 {
                let i = group[end - 1];
                match self.settle_one(ids[i]).await? {
                    TxStatus::Committed => {
                        for &j in &group[..end] {
                            out[j] = Some(TxStatus::Committed);
                        }
                        break;
                    }
                    _ => {
                        out[i] = Some(TxStatus::Invalid);
                        end -= 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Classify everything the given view decides. Returns whether any ID
    /// is still pending and which ones need the term history.
    fn classify(
        ids: &[TxId],
        out: &mut [Option<TxStatus>],
        committed: TxId,
        history: Option<&TermHistory>,
    ) -> (bool, bool) {
        let (mut pending, mut need) = (false, false);
        for (i, id) in ids.iter().enumerate() {
            if out[i].is_some() {
                continue;
            }
            match classify_local(*id, committed, history) {
                LocalStatus::Known(s) if s.is_terminal() => out[i] = Some(s),
                LocalStatus::Known(_) => pending = true,
                LocalStatus::NeedMoreInfo => need = true,
            }
        }
        (pending, need)
    }

    async fn latest_committed(&mut self, ids: &[TxId], out: &mut [Option<TxStatus>]) -> Result<()> {
        loop {
            let c = self.committed().await?;
            let (pending, need) = Self::classify(ids, out, c, None);
            if need {
                // Only IDs from other terms remain undecided here.
                let open: Vec<usize> = (0..ids.len())
                    .filter(|&i| out[i].is_none() && ids[i].revision <= c.revision)
                    .collect();
                let sub: Vec<TxId> = open.iter().map(|&i| ids[i]).collect();
                let mut sub_out = vec![None; sub.len()];
                self.last_in_term(&sub, &mut sub_out).await?;
                for (k, &i) in open.iter().enumerate() {
                    out[i] = sub_out[k];
                }
            }
            if !pending {
                return Ok(());
            }
            self.wait().await?;
        }
    }

    async fn with_history(&mut self, ids: &[TxId], out: &mut [Option<TxStatus>]) -> Result<()> {
        loop {
            let (h, c) = self.history().await?;
            let (pending, need) = Self::classify(ids, out, c, Some(&h));
            if need {
                return Err(Error::Internal("term history does not cover the committed prefix".into()));
            }
            if !pending {
                return Ok(());
            }
            self.wait().await?;
        }
    }

    async fn returned_committed(&mut self, ids: &[TxId], out: &mut [Option<TxStatus>]) -> Result<()> {
        let mut history: Option<TermHistory> = None;
        let mut last_seen: Option<TxId> = None;
        loop {
            let c = match self.api.header_committed() {
                // A feed that stopped moving says nothing new; ask directly.
                Some(c) if Some(c) != last_seen => c,
                _ => self.committed().await?,
            };
            last_seen = Some(c);
            if history.as_ref().is_some_and(|h| h.latest_term() < Some(c.term)) {
                history = None;
            }
            let (pending, need) = Self::classify(ids, out, c, history.as_ref());
            if need {
                let (h, hc) = self.history().await?;
                history = Some(h);
                last_seen = Some(hc);
                let (p2, n2) = Self::classify(ids, out, hc, history.as_ref());
                if n2 {
                    return Err(Error::Internal("term history does not cover the committed prefix".into()));
                }
                if !p2 {
                    return Ok(());
                }
            } else if !pending {
                return Ok(());
            }
            self.wait().await?;
        }
    }
}

/// Wait until every ID in `ids` is `Committed` or `Invalid`.
///
/// Gives up with `Unavailable` after `budget_ms` of accumulated pauses.
pub async fn wait_for_commit<A: CommitApi>(
    api: &mut A,
    ids: &[TxId],
    strategy: CommitStrategy,
    budget_ms: u64,
) -> Result<WaitOutcome> {
    let mut w = Waiter {
        api,
        polls: 0,
        pause: BASE_PAUSE_MS,
        waited: 0,
        budget_ms,
    };
    let mut out = vec![None; ids.len()];
    match strategy {
        CommitStrategy::Naive => w.naive(ids, &mut out).await?,
        CommitStrategy::PollLastInTerm => w.last_in_term(ids, &mut out).await?,
        CommitStrategy::PollLatestCommitted => w.latest_committed(ids, &mut out).await?,
        CommitStrategy::PollWithTermHistory => w.with_history(ids, &mut out).await?,
        CommitStrategy::ReturnedCommitted => w.returned_committed(ids, &mut out).await?,
    }
    Ok(WaitOutcome {
        statuses: out.into_iter().map(|s| s.expect("every ID resolved")).collect(),
        polls: w.polls,
    })
}

/// [`CommitApi`] over the HTTP gateway of one node.
pub struct HttpCommitApi {
    pub client: Client,
}

impl CommitApi for HttpCommitApi {
    async fn tx_status(&mut self, txid: TxId) -> Result<TxStatus> {
        Ok(self.client.tx_status(txid).await?.status)
    }

    async fn committed(&mut self) -> Result<TxId> {
        let r = self.client.committed().await?;
        Ok(TxId::new(r.raft_term, r.revision))
    }

    async fn term_history(&mut self) -> Result<(TermHistory, TxId)> {
        let r = self.client.term_history().await?;
        Ok((
            TermHistory::new(r.terms),
            TxId::new(r.header.committed_raft_term, r.header.committed_revision),
        ))
    }

    fn header_committed(&mut self) -> Option<TxId> {
        self.client
            .last_header()
            .map(|h| TxId::new(h.committed_raft_term, h.committed_revision))
    }

    async fn pause(&mut self, ms: u64) {
        tokio::time::sleep(std::time::Duration::from_millis(ms)).await;
    }
}

/// [`CommitApi`] against the in-process simulator. Requests go to the
/// current leader, or to `via` when set; pauses advance simulated time.
pub struct SimCommitApi<'a> {
    pub sim: &'a mut Sim,
    pub via: Option<NodeId>,
}

impl SimCommitApi<'_> {
    fn target(&self) -> Result<&crate::replication::Node> {
        let id = match &self.via {
            Some(id) => id.clone(),
            None => self
                .sim
                .leader()
                .ok_or_else(|| Error::Unavailable("no leader".into()))?,
        };
        self.sim
            .node(&id)
            .filter(|n| !n.is_recovering())
            .ok_or_else(|| Error::Unavailable(format!("{id} is down")))
    }
}

impl CommitApi for SimCommitApi<'_> {
    async fn tx_status(&mut self, txid: TxId) -> Result<TxStatus> {
        Ok(self.target()?.tx_status(txid))
    }

    async fn committed(&mut self) -> Result<TxId> {
        Ok(self.target()?.committed())
    }

    async fn term_history(&mut self) -> Result<(TermHistory, TxId)> {
        let n = self.target()?;
        Ok((n.term_history(), n.committed()))
    }

    fn header_committed(&mut self) -> Option<TxId> {
        self.target().ok().map(|n| n.committed())
    }

    async fn pause(&mut self, ms: u64) {
        self.sim.run(ms as i64);
    }
}
