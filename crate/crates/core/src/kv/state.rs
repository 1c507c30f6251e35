use im::{OrdMap, OrdSet};

use super::{resolve_revisions, KeyRange, StoredValue, TxEffects};
use crate::error::{Error, Result};
use crate::lease::{LeaseRecord, LeaseTable};
use crate::proto::*;
use crate::types::{LeaseId, Millis, Revision, Term, TxId};

/// Source of committed historical reads, used by ranges with `revision > 0`.
pub trait HistoricalRead {
    fn range_at(&self, req: &RangeRequest) -> Result<RangeResponse>;
}

/// Inputs that execution may depend on besides the state itself.
#[derive(Clone, Copy)]
pub struct ExecContext<'a> {
    /// Clock reading used for lease liveness.
    pub now: Millis,
    /// Term in which a mutating result would be assigned its revision.
    pub term: Term,
    /// Highest committed revision, bounding compaction.
    pub committed_revision: Revision,
    pub history: Option<&'a dyn HistoricalRead>,
}

impl<'a> ExecContext<'a> {
    pub fn new(now: Millis, term: Term, committed_revision: Revision) -> Self {
        ExecContext {
            now,
            term,
            committed_revision,
            history: None,
        }
    }

    pub fn with_history(mut self, history: &'a dyn HistoricalRead) -> Self {
        self.history = Some(history);
        self
    }
}

/// Result of executing one request. An empty effect set means the request was
/// read-only and consumes no revision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Executed {
    pub response: Response,
    pub effects: TxEffects,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Entry {
    raw: StoredValue,
    last_write: TxId,
}

/// The replicated key-value state: keys, leases, compaction floor and the
/// registered public prefixes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvState {
    map: OrdMap<Vec<u8>, Entry>,
    leases: LeaseTable,
    public_prefixes: OrdSet<Vec<u8>>,
    compacted: Revision,
    revision: Revision,
    last_tx: TxId,
}

impl KvState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Revision of the last applied mutation.
    pub fn revision(&self) -> Revision {
        self.revision
    }

    pub fn last_tx(&self) -> TxId {
        self.last_tx
    }

    pub fn compacted(&self) -> Revision {
        self.compacted
    }

    pub fn leases(&self) -> &LeaseTable {
        &self.leases
    }

    pub fn public_prefixes(&self) -> impl Iterator<Item = &Vec<u8>> {
        self.public_prefixes.iter()
    }

    pub fn is_public(&self, key: &[u8]) -> bool {
        self.public_prefixes.iter().any(|p| key.starts_with(p))
    }

    /// Number of stored keys, including ones hidden by an expired lease.
    pub fn stored_len(&self) -> usize {
        self.map.len()
    }

    /// The value a reader would see for `key` at clock reading `now`.
    pub fn get(&self, key: &[u8], now: Millis) -> Option<KeyValue> {
        self.visible(key, now)
            .map(|e| KeyValue::from_stored(key, &resolve_revisions(&e.raw, e.last_write)))
    }

    /// Every visible key-value pair in key order.
    pub fn visible_kvs(&self, now: Millis) -> Vec<KeyValue> {
        self.map
            .iter()
            .filter(|(_, e)| !self.leases.hides(e.raw.lease, now))
            .map(|(k, e)| KeyValue::from_stored(k, &resolve_revisions(&e.raw, e.last_write)))
            .collect()
    }

    fn visible(&self, key: &[u8], now: Millis) -> Option<&Entry> {
        self.map
            .get(key)
            .filter(|e| !self.leases.hides(e.raw.lease, now))
    }

    /// Execute `req` against this state without modifying it.
    pub fn execute(&self, req: &Request, ctx: &ExecContext<'_>) -> Result<Executed> {
        let pending = TxId::new(ctx.term, self.revision + 1);
        let mut scratch = self.clone();
        let mut fx = TxEffects::default();
        let response = match req {
            Request::Range(r) => Response::Range(scratch.range(r, ctx)?),
            Request::Put(r) => Response::Put(scratch.put(r, ctx, pending, &mut fx)?),
            Request::DeleteRange(r) => {
                Response::DeleteRange(scratch.delete_range(r, ctx, pending, &mut fx)?)
            }
            Request::Txn(t) => Response::Txn(scratch.txn(t, ctx, pending, &mut fx)?),
            Request::Compaction(r) => Response::Compaction(self.compaction(r, ctx, &mut fx)?),
            Request::LeaseGrant(r) => {
                let rec = self.leases.grant(r.ttl, r.id, ctx.now, ctx.term)?;
                fx.leases.insert(rec.id, Some(rec));
                Response::LeaseGrant(LeaseGrantResponse {
                    header: ResponseHeader::default(),
                    id: rec.id,
                    ttl: rec.ttl,
                })
            }
            Request::LeaseRevoke(r) => {
                let keys = self.leases.revoke(r.id)?;
                let mut deleted = 0;
                for k in keys {
                    if self.map.contains_key(&k) {
                        fx.writes.insert(k, None);
                        deleted += 1;
                    }
                }
                fx.leases.insert(r.id, None);
                Response::LeaseRevoke(LeaseRevokeResponse {
                    header: ResponseHeader::default(),
                    deleted,
                })
            }
            Request::LeaseKeepAlive(r) => {
                let rec = self.leases.keep_alive(r.id, ctx.now)?;
                fx.leases.insert(rec.id, Some(rec));
                Response::LeaseKeepAlive(LeaseKeepAliveResponse {
                    header: ResponseHeader::default(),
                    id: rec.id,
                    ttl: rec.ttl,
                })
            }
            Request::SetPublicPrefix(r) => {
                if r.prefix.is_empty() {
                    return Err(Error::InvalidArgument("public prefix must not be empty".into()));
                }
                let mut prefixes = self.public_prefixes.clone();
                if !prefixes.contains(&r.prefix) {
                    fx.public_prefixes.push(r.prefix.clone());
                    prefixes.insert(r.prefix.clone());
                }
                Response::SetPublicPrefix(SetPublicPrefixResponse {
                    header: ResponseHeader::default(),
                    prefixes: prefixes
                        .iter()
                        .map(|p| String::from_utf8_lossy(p).into_owned())
                        .collect(),
                })
            }
        };
        Ok(Executed {
            response,
            effects: fx,
        })
    }

    fn range(&self, r: &RangeRequest, ctx: &ExecContext<'_>) -> Result<RangeResponse> {
        if r.limit < 0 {
            return Err(Error::InvalidArgument("limit must not be negative".into()));
        }
        let range = KeyRange::new(&r.key, r.range_end.as_deref())?;
        if r.revision < 0 {
            return Err(Error::InvalidArgument("revision must not be negative".into()));
        }
        if r.revision > 0 {
            return match ctx.history {
                Some(h) => h.range_at(r),
                None => Err(Error::Unimplemented(
                    "historical reads are not available here".into(),
                )),
            };
        }
        let mut kvs = Vec::new();
        let mut count = 0i64;
        for (k, e) in self.map.range(range.bounds()) {
            if self.leases.hides(e.raw.lease, ctx.now) {
                continue;
            }
            count += 1;
            if !r.count_only && (r.limit == 0 || (kvs.len() as i64) < r.limit) {
                kvs.push(KeyValue::from_stored(k, &resolve_revisions(&e.raw, e.last_write)));
            }
        }
        let more = r.limit > 0 && count > r.limit;
        Ok(RangeResponse {
            header: ResponseHeader::default(),
            kvs,
            more,
            count,
        })
    }

    fn put(
        &mut self,
        r: &PutRequest,
        ctx: &ExecContext<'_>,
        pending: TxId,
        fx: &mut TxEffects,
    ) -> Result<PutResponse> {
        if r.key.is_empty() {
            return Err(Error::InvalidArgument("key must not be empty".into()));
        }
        if r.lease < 0 || (r.lease != 0 && !self.leases.is_live(r.lease, ctx.now)) {
            return Err(Error::LeaseNotFound(r.lease));
        }
        let prev = self
            .visible(&r.key, ctx.now)
            .map(|e| resolve_revisions(&e.raw, e.last_write));
        let raw = match &prev {
            Some(p) => StoredValue {
                data: r.value.clone(),
                create_revision: p.create_revision,
                mod_revision: p.mod_revision,
                version: p.version + 1,
                lease: r.lease,
            },
            None => StoredValue {
                data: r.value.clone(),
                create_revision: 0,
                mod_revision: 0,
                version: 1,
                lease: r.lease,
            },
        };
        let mut step = TxEffects::default();
        step.writes.insert(r.key.clone(), Some(raw));
        self.apply_effects(&step, pending);
        fx.merge(step);
        Ok(PutResponse {
            header: ResponseHeader::default(),
            prev_kv: prev
                .filter(|_| r.prev_kv)
                .map(|p| KeyValue::from_stored(&r.key, &p)),
        })
    }

    fn delete_range(
        &mut self,
        r: &DeleteRangeRequest,
        ctx: &ExecContext<'_>,
        pending: TxId,
        fx: &mut TxEffects,
    ) -> Result<DeleteRangeResponse> {
        let range = KeyRange::new(&r.key, r.range_end.as_deref())?;
        let mut step = TxEffects::default();
        let mut prev_kvs = Vec::new();
        for (k, e) in self.map.range(range.bounds()) {
            if self.leases.hides(e.raw.lease, ctx.now) {
                continue;
            }
            if r.prev_kv {
                prev_kvs.push(KeyValue::from_stored(k, &resolve_revisions(&e.raw, e.last_write)));
            }
            step.writes.insert(k.clone(), None);
        }
        let deleted = step.writes.len() as i64;
        self.apply_effects(&step, pending);
        fx.merge(step);
        Ok(DeleteRangeResponse {
            header: ResponseHeader::default(),
            deleted,
            prev_kvs,
        })
    }

    fn txn(
        &mut self,
        t: &TxnRequest,
        ctx: &ExecContext<'_>,
        pending: TxId,
        fx: &mut TxEffects,
    ) -> Result<TxnResponse> {
        validate_branch(&t.success)?;
        validate_branch(&t.failure)?;
        let mut succeeded = true;
        for c in &t.compare {
            if !self.compare(c, ctx.now)? {
                succeeded = false;
            }
        }
        let ops = if succeeded { &t.success } else { &t.failure };
        let mut responses = Vec::with_capacity(ops.len());
        for op in ops {
            responses.push(match op {
                RequestOp::RequestRange(r) => ResponseOp::ResponseRange(self.range(r, ctx)?),
                RequestOp::RequestPut(r) => ResponseOp::ResponsePut(self.put(r, ctx, pending, fx)?),
                RequestOp::RequestDeleteRange(r) => {
                    ResponseOp::ResponseDeleteRange(self.delete_range(r, ctx, pending, fx)?)
                }
                RequestOp::RequestTxn(_) => unreachable!("rejected by validate_branch"),
            });
        }
        Ok(TxnResponse {
            header: ResponseHeader::default(),
            succeeded,
            responses,
        })
    }

    fn compare(&self, c: &Compare, now: Millis) -> Result<bool> {
        let cur = self
            .visible(&c.key, now)
            .map(|e| resolve_revisions(&e.raw, e.last_write))
            .unwrap_or_default();
        let ord = match c.target {
            CompareTarget::Version => cur.version.cmp(&required(c.version, "version")?),
            CompareTarget::Create => cur
                .create_revision
                .cmp(&required(c.create_revision, "create_revision")?),
            CompareTarget::Mod => cur.mod_revision.cmp(&required(c.mod_revision, "mod_revision")?),
            CompareTarget::Value => {
                let want = c
                    .value
                    .as_deref()
                    .ok_or_else(|| Error::InvalidArgument("compare target VALUE needs a value".into()))?;
                cur.data.as_slice().cmp(want)
            }
        };
        Ok(match c.result {
            CompareResult::Equal => ord.is_eq(),
            CompareResult::NotEqual => ord.is_ne(),
            CompareResult::Greater => ord.is_gt(),
            CompareResult::Less => ord.is_lt(),
        })
    }

    fn compaction(
        &self,
        r: &CompactionRequest,
        ctx: &ExecContext<'_>,
        fx: &mut TxEffects,
    ) -> Result<CompactionResponse> {
        if r.revision > ctx.committed_revision {
            return Err(Error::FutureRevision {
                requested: r.revision,
                head: ctx.committed_revision,
            });
        }
        if r.revision < self.compacted {
            return Err(Error::Compacted {
                requested: r.revision,
                compacted: self.compacted,
            });
        }
        let reaped = self.leases.expired(ctx.now);
        let mut deleted = 0;
        for id in &reaped {
            for k in self.leases.revoke(*id)? {
                if self.map.contains_key(&k) {
                    fx.writes.insert(k, None);
                    deleted += 1;
                }
            }
            fx.leases.insert(*id, None);
        }
        fx.compaction = Some(r.revision);
        Ok(CompactionResponse {
            header: ResponseHeader::default(),
            deleted,
            reaped_leases: reaped,
        })
    }

    /// Apply the effects of the mutating transaction `txid`.
    pub fn apply(&mut self, fx: &TxEffects, txid: TxId) {
        self.apply_effects(fx, txid);
        self.revision = txid.revision;
        self.last_tx = txid;
    }

    fn apply_effects(&mut self, fx: &TxEffects, txid: TxId) {
        for (k, v) in &fx.writes {
            if let Some(old) = self.map.get(k) {
                let old_lease = old.raw.lease;
                self.leases.detach(old_lease, k);
            }
            match v {
                Some(raw) => {
                    self.map.insert(
                        k.clone(),
                        Entry {
                            raw: raw.clone(),
                            last_write: txid,
                        },
                    );
                    if raw.lease != 0 {
                        self.leases.attach(raw.lease, k);
                    }
                }
                None => {
                    self.map.remove(k);
                }
            }
        }
        for (id, rec) in &fx.leases {
            match rec {
                Some(rec) => {
                    self.leases.upsert(*rec);
                    self.reattach(*id);
                }
                None => self.leases.remove(*id),
            }
        }
        if let Some(c) = fx.compaction {
            self.compacted = self.compacted.max(c);
        }
        for p in &fx.public_prefixes {
            self.public_prefixes.insert(p.clone());
        }
    }

    /// A granted lease may already own keys if it was re-created by ID.
    fn reattach(&mut self, id: LeaseId) {
        if self.leases.get(id).is_some_and(|l| l.keys.is_empty()) {
            let keys: Vec<Vec<u8>> = self
                .map
                .iter()
                .filter(|(_, e)| e.raw.lease == id)
                .map(|(k, _)| k.clone())
                .collect();
            for k in keys {
                self.leases.attach(id, &k);
            }
        }
    }

    /// Lease record as replicated, for inspection.
    pub fn lease(&self, id: LeaseId) -> Option<LeaseRecord> {
        self.leases.get(id).map(|l| l.record)
    }
}

fn required<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("compare target needs {name}")))
}

/// Reject nested transactions and branches that write the same key twice.
fn validate_branch(ops: &[RequestOp]) -> Result<()> {
    let mut puts: Vec<&[u8]> = Vec::new();
    let mut deletes: Vec<KeyRange> = Vec::new();
    for op in ops {
        match op {
            RequestOp::RequestTxn(_) => {
                return Err(Error::Unimplemented("nested transactions".into()));
            }
            RequestOp::RequestPut(p) => {
                if puts.contains(&p.key.as_slice()) {
                    return Err(Error::InvalidArgument("duplicate key given in txn request".into()));
                }
                puts.push(&p.key);
            }
            RequestOp::RequestDeleteRange(d) => {
                deletes.push(KeyRange::new(&d.key, d.range_end.as_deref())?);
            }
            RequestOp::RequestRange(_) => {}
        }
    }
    if puts.iter().any(|k| deletes.iter().any(|d| d.contains(k))) {
        return Err(Error::InvalidArgument("duplicate key given in txn request".into()));
    }
    Ok(())
}
