//! Per-node index of committed history.
//!
//! Fed with committed transactions in revision order, it keeps every version
//! of every key and a revision-ordered event log. It answers range queries at
//! a past revision and serves watch replay. The index never sees uncommitted
//! entries, so it may lag the optimistic state.

use im::{OrdMap, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{resolve_revisions, KeyRange, HistoricalRead, StoredValue};
use crate::ledger::TxEntry;
use crate::proto::{KeyValue, RangeRequest, RangeResponse, ResponseHeader};
use crate::types::{Revision, TxId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Put,
    Delete,
}

/// A committed change to one key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "type")]
    pub kind: EventKind,
    /// For deletes only `key` and `mod_revision` are meaningful.
    pub kv: KeyValue,
    pub txid: TxId,
}

impl Event {
    pub fn revision(&self) -> Revision {
        self.txid.revision
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Version {
    revision: Revision,
    value: Option<StoredValue>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HistoricalIndex {
    head: TxId,
    compacted: Revision,
    keys: OrdMap<Vec<u8>, Vector<Version>>,
    events: OrdMap<Revision, Vec<Event>>,
}

impl HistoricalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build an index from the committed transactions of a ledger file.
    pub fn rebuild(ledger: &[u8], secret: &[u8; 32]) -> Result<Self> {
        let mut index = HistoricalIndex::new();
        for tx in crate::ledger::read_transactions(ledger, secret)? {
            index.apply(&tx)?;
        }
        Ok(index)
    }

    /// Last applied transaction.
    pub fn head(&self) -> TxId {
        self.head
    }

    pub fn compacted(&self) -> Revision {
        self.compacted
    }

    /// Apply the next committed transaction. Returns the events it produced.
    pub fn apply(&mut self, tx: &TxEntry) -> Result<Vec<Event>> {
        if tx.txid.revision != self.head.revision + 1 {
            return Err(Error::OrderingViolation(format!(
                "index at revision {} cannot apply {}",
                self.head.revision, tx.txid
            )));
        }
        let rev = tx.txid.revision;
        let mut events = Vec::with_capacity(tx.effects.writes.len());
        for (key, raw) in &tx.effects.writes {
            let value = raw.as_ref().map(|r| resolve_revisions(r, tx.txid));
            let event = match &value {
                Some(v) => Event {
                    kind: EventKind::Put,
                    kv: KeyValue::from_stored(key, v),
                    txid: tx.txid,
                },
                None => Event {
                    kind: EventKind::Delete,
                    kv: KeyValue {
                        key: key.clone(),
                        create_revision: 0,
                        mod_revision: rev,
                        version: 0,
                        value: Vec::new(),
                        lease: 0,
                    },
                    txid: tx.txid,
                },
            };
            events.push(event);
            self.keys
                .entry(key.clone())
                .or_default()
                .push_back(Version { revision: rev, value });
        }
        if !events.is_empty() {
            self.events.insert(rev, events.clone());
        }
        self.head = tx.txid;
        if let Some(target) = tx.effects.compaction {
            self.compact(target);
        }
        Ok(events)
    }

    /// Drop history older than `target`, keeping each key's state as of `target`.
    fn compact(&mut self, target: Revision) {
        if target <= self.compacted {
            return;
        }
        self.compacted = target;
        let keys: Vec<Vec<u8>> = self.keys.keys().cloned().collect();
        for k in keys {
            let versions = self.keys.get(&k).expect("key present").clone();
            let first_kept = versions.iter().rposition(|v| v.revision <= target);
            let Some(pos) = first_kept else { continue };
            let mut kept = versions.skip(pos);
            if kept.front().is_some_and(|v| v.value.is_none()) {
                kept.pop_front();
            }
            if kept.is_empty() {
                self.keys.remove(&k);
            } else {
                self.keys.insert(k, kept);
            }
        }
        let (_, at, mut rest) = self.events.split_lookup(&target);
        if let Some(evs) = at {
            rest.insert(target, evs);
        }
        self.events = rest;
    }

    fn check_revision(&self, revision: Revision) -> Result<()> {
        if revision < self.compacted {
            return Err(Error::Compacted {
                requested: revision,
                compacted: self.compacted,
            });
        }
        if revision > self.head.revision {
            return Err(Error::FutureRevision {
                requested: revision,
                head: self.head.revision,
            });
        }
        Ok(())
    }

    /// Value of `key` as of `revision`.
    pub fn get_at(&self, key: &[u8], revision: Revision) -> Result<Option<KeyValue>> {
        self.check_revision(revision)?;
        Ok(self.keys.get(key).and_then(|vs| version_at(vs, revision)).map(|v| KeyValue::from_stored(key, v)))
    }

    pub fn range_at(&self, req: &RangeRequest) -> Result<RangeResponse> {
        if req.limit < 0 {
            return Err(Error::InvalidArgument("limit must not be negative".into()));
        }
        let range = KeyRange::new(&req.key, req.range_end.as_deref())?;
        self.check_revision(req.revision)?;
        let mut kvs = Vec::new();
        let mut count = 0i64;
        for (k, vs) in self.keys.range(range.bounds()) {
            if let Some(v) = version_at(vs, req.revision) {
                count += 1;
                if !req.count_only && (req.limit == 0 || (kvs.len() as i64) < req.limit) {
                    kvs.push(KeyValue::from_stored(k, v));
                }
            }
        }
        Ok(RangeResponse {
            header: ResponseHeader::default(),
            more: req.limit > 0 && count > req.limit,
            kvs,
            count,
        })
    }

    /// Events with revision in `[from, head]`, at most `limit` revisions' worth.
    pub fn events_from(&self, from: Revision, limit: usize) -> Result<(Vec<Event>, Revision)> {
        if from < self.compacted {
            return Err(Error::Compacted {
                requested: from,
                compacted: self.compacted,
            });
        }
        let mut out = Vec::new();
        let mut next = from.max(1);
        for (rev, evs) in self.events.range(next..) {
            if out.len() >= limit {
                break;
            }
            out.extend(evs.iter().cloned());
            next = rev + 1;
        }
        if out.len() < limit {
            next = next.max(self.head.revision + 1);
        }
        Ok((out, next))
    }
}

fn version_at(vs: &Vector<Version>, revision: Revision) -> Option<&StoredValue> {
    let idx = vs.binary_search_by(|v| v.revision.cmp(&revision)).map_or_else(|i| i.checked_sub(1), Some)?;
    vs[idx].value.as_ref()
}

impl HistoricalRead for HistoricalIndex {
    fn range_at(&self, req: &RangeRequest) -> Result<RangeResponse> {
        HistoricalIndex::range_at(self, req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::TxEffects;
    use crate::types::Digest;

    fn tx(rev: Revision, writes: &[(&str, Option<&str>)]) -> TxEntry {
        let mut effects = TxEffects::default();
        for (k, v) in writes {
            effects.writes.insert(
                k.as_bytes().to_vec(),
                v.map(|v| StoredValue {
                    data: v.as_bytes().to_vec(),
                    version: 1,
                    ..Default::default()
                }),
            );
        }
        TxEntry {
            txid: TxId::new(1, rev),
            effects,
            claims_digest: Digest::default(),
            governance: None,
        }
    }

    #[test]
    fn point_in_time_reads() {
        let mut ix = HistoricalIndex::new();
        ix.apply(&tx(1, &[("a", Some("1"))])).unwrap();
        ix.apply(&tx(2, &[("b", Some("1"))])).unwrap();
        ix.apply(&tx(3, &[("k", Some("v"))])).unwrap();
        ix.apply(&tx(4, &[("a", Some("2"))])).unwrap();
        ix.apply(&tx(5, &[("k", None)])).unwrap();
        let k4 = ix.get_at(b"k", 4).unwrap().unwrap();
        assert_eq!(k4.mod_revision, 3);
        assert!(ix.get_at(b"k", 5).unwrap().is_none());
        assert!(ix.get_at(b"k", 2).unwrap().is_none());
        assert!(matches!(ix.get_at(b"k", 6), Err(Error::FutureRevision { .. })));
        let all = ix.range_at(&RangeRequest { revision: 4, ..RangeRequest::prefix_from("") }).unwrap();
        assert_eq!(all.count, 3);
    }

    #[test]
    fn ordering_is_enforced() {
        let mut ix = HistoricalIndex::new();
        assert!(matches!(ix.apply(&tx(2, &[])), Err(Error::OrderingViolation(_))));
    }

    #[test]
    fn compaction_keeps_state_at_target() {
        let mut ix = HistoricalIndex::new();
        ix.apply(&tx(1, &[("a", Some("1"))])).unwrap();
        ix.apply(&tx(2, &[("a", Some("2")), ("b", Some("1"))])).unwrap();
        ix.apply(&tx(3, &[("b", None)])).unwrap();
        let mut c = tx(4, &[]);
        c.effects.compaction = Some(3);
        ix.apply(&c).unwrap();
        assert!(matches!(ix.get_at(b"a", 2), Err(Error::Compacted { .. })));
        assert_eq!(ix.get_at(b"a", 3).unwrap().unwrap().value, b"2");
        assert!(ix.get_at(b"b", 3).unwrap().is_none());
        assert!(matches!(ix.events_from(2, 10), Err(Error::Compacted { .. })));
        let (evs, next) = ix.events_from(3, 10).unwrap();
        assert_eq!(evs.len(), 1);
        assert_eq!(next, 5);
    }

    #[test]
    fn events_page_by_revision() {
        let mut ix = HistoricalIndex::new();
        for r in 1..=10 {
            ix.apply(&tx(r, &[("k", Some("v"))])).unwrap();
        }
        let (evs, next) = ix.events_from(1, 4).unwrap();
        assert_eq!(evs.len(), 4);
        assert_eq!(next, 5);
        let (evs, next) = ix.events_from(next, 100).unwrap();
        assert_eq!(evs.len(), 6);
        assert_eq!(next, 11);
    }
}
