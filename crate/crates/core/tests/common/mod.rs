//! Shared test support: a sequential reference model of the key-value
//! semantics, a single-node harness driven by a scripted clock, and a random
//! request generator that exercises both.
#![allow(dead_code)]

pub mod sim;
pub mod watch;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lskv::crypto::ServiceKeys;
use lskv::index::Event;
use lskv::ledger::LedgerEncoder;
use lskv::proto::*;
use lskv::replication::node::{Node, NodeOptions};
use lskv::{Error, LeaseId, Millis, NodeId, Result, Revision, TxId};

// ---------------------------------------------------------------------------
// Reference model
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default)]
struct State {
    kv: BTreeMap<Vec<u8>, KeyValue>,
    /// id -> (ttl seconds, expiry ms)
    leases: BTreeMap<LeaseId, (i64, Millis)>,
    lease_counter: i64,
    compacted: Revision,
}

impl State {
    fn live(&self, lease: LeaseId, now: Millis) -> bool {
        self.leases.get(&lease).is_some_and(|&(_, exp)| now < exp)
    }

    fn visible(&self, key: &[u8], now: Millis) -> Option<&KeyValue> {
        self.kv.get(key).filter(|v| v.lease == 0 || self.live(v.lease, now))
    }
}

/// Which keys a (key, range_end) pair selects, etcd style.
fn selector(key: &[u8], end: Option<&[u8]>) -> Result<Box<dyn Fn(&[u8]) -> bool>> {
    let key = key.to_vec();
    match end {
        None | Some([]) => {
            if key.is_empty() {
                return Err(Error::InvalidArgument("empty key".into()));
            }
            Ok(Box::new(move |k| k == key.as_slice()))
        }
        Some([0]) => Ok(Box::new(move |k| k >= key.as_slice())),
        Some(end) => {
            if key.as_slice() >= end {
                return Err(Error::InvalidArgument("bad range".into()));
            }
            let end = end.to_vec();
            Ok(Box::new(move |k| k >= key.as_slice() && k < end.as_slice()))
        }
    }
}

/// Straightforward in-memory model of one node's externally visible behavior.
pub struct Model {
    pub cluster_id: String,
    pub member_id: String,
    pub term: i64,
    pub now: Millis,
    pub revision: Revision,
    pub committed: TxId,
    pub index_head: Revision,
    state: State,
    /// (revision of the compaction, target)
    compactions: Vec<(Revision, Revision)>,
    /// Full stored map after each revision, index 0 being empty.
    history: Vec<BTreeMap<Vec<u8>, KeyValue>>,
}

impl Model {
    pub fn new(cluster_id: &str, member_id: &str, term: i64) -> Self {
        Model {
            cluster_id: cluster_id.into(),
            member_id: member_id.into(),
            term,
            now: 0,
            revision: 0,
            committed: TxId::new(term, 0),
            index_head: 0,
            state: State::default(),
            compactions: Vec::new(),
            history: vec![BTreeMap::new()],
        }
    }

    /// Lease IDs that currently exist, live or expired.
    pub fn lease_ids(&self) -> Vec<LeaseId> {
        self.state.leases.keys().copied().collect()
    }

    /// Visible key-value pairs at the current clock.
    pub fn visible(&self) -> Vec<KeyValue> {
        self.state
            .kv
            .keys()
            .filter_map(|k| self.state.visible(k, self.now).cloned())
            .collect()
    }

    /// Everything up to the current revision becomes committed and indexed.
    pub fn commit_all(&mut self) {
        self.committed = TxId::new(self.term, self.revision);
        self.index_head = self.revision;
    }

    /// Every stored key as of `revision`, ignoring leases.
    pub fn snapshot(&self, revision: Revision) -> Vec<KeyValue> {
        self.history[revision as usize].values().cloned().collect()
    }

    /// Changes in revisions `from..=to` to keys in `[key, end)`, found by
    /// diffing consecutive snapshots. `None` marks a deletion.
    pub fn changes(
        &self,
        key: &[u8],
        end: Option<&[u8]>,
        from: Revision,
        to: Revision,
    ) -> Vec<(Revision, Vec<u8>, Option<KeyValue>)> {
        let matches = selector(key, end).expect("valid range");
        let mut out = Vec::new();
        for r in from.max(1)..=to.min(self.revision) {
            let (prev, cur) = (&self.history[r as usize - 1], &self.history[r as usize]);
            let keys: std::collections::BTreeSet<&Vec<u8>> = prev.keys().chain(cur.keys()).collect();
            for k in keys.into_iter().filter(|k| matches(k)) {
                match (prev.get(k), cur.get(k)) {
                    (_, Some(v)) if v.mod_revision == r => out.push((r, k.clone(), Some(v.clone()))),
                    (Some(_), None) => out.push((r, k.clone(), None)),
                    _ => {}
                }
            }
        }
        out
    }

    pub fn index_compacted(&self) -> Revision {
        self.compactions
            .iter()
            .filter(|(at, _)| *at <= self.index_head)
            .map(|(_, t)| *t)
            .max()
            .unwrap_or(0)
    }

    fn header(&self, at: TxId) -> ResponseHeader {
        ResponseHeader {
            cluster_id: self.cluster_id.clone(),
            member_id: self.member_id.clone(),
            raft_term: at.term,
            revision: at.revision,
            committed_raft_term: self.committed.term,
            committed_revision: self.committed.revision,
        }
    }

    pub fn apply(&mut self, req: &Request) -> Result<Response> {
        let pending = self.revision + 1;
        let mut s = self.state.clone();
        let mut mutated = false;
        let mut resp = match req {
            Request::Range(r) => Response::Range(self.range(&s, r)?),
            Request::Put(r) => {
                mutated = true;
                Response::Put(self.put(&mut s, r, pending)?)
            }
            Request::DeleteRange(r) => {
                let d = self.delete(&mut s, r)?;
                mutated = d.deleted > 0;
                Response::DeleteRange(d)
            }
            Request::Txn(t) => {
                check_branch(&t.success)?;
                check_branch(&t.failure)?;
                let ok = t.compare.iter().all(|c| self.compare(&s, c));
                let ops = if ok { &t.success } else { &t.failure };
                let mut responses = Vec::new();
                for op in ops {
                    responses.push(match op {
                        RequestOp::RequestRange(r) => ResponseOp::ResponseRange(self.range(&s, r)?),
                        RequestOp::RequestPut(r) => {
                            mutated = true;
                            ResponseOp::ResponsePut(self.put(&mut s, r, pending)?)
                        }
                        RequestOp::RequestDeleteRange(r) => {
                            let d = self.delete(&mut s, r)?;
                            mutated |= d.deleted > 0;
                            ResponseOp::ResponseDeleteRange(d)
                        }
                        RequestOp::RequestTxn(_) => return Err(Error::Unimplemented("nested".into())),
                    });
                }
                Response::Txn(TxnResponse {
                    header: ResponseHeader::default(),
                    succeeded: ok,
                    responses,
                })
            }
            Request::Compaction(c) => {
                if c.revision > self.committed.revision {
                    return Err(Error::FutureRevision {
                        requested: c.revision,
                        head: self.committed.revision,
                    });
                }
                if c.revision < s.compacted {
                    return Err(Error::Compacted {
                        requested: c.revision,
                        compacted: s.compacted,
                    });
                }
                let reaped: Vec<LeaseId> = s
                    .leases
                    .iter()
                    .filter(|(_, &(_, exp))| self.now >= exp)
                    .map(|(&id, _)| id)
                    .collect();
                let mut deleted = 0;
                for id in &reaped {
                    deleted += revoke(&mut s, *id);
                }
                s.compacted = s.compacted.max(c.revision);
                self.compactions.push((pending, c.revision));
                mutated = true;
                Response::Compaction(CompactionResponse {
                    header: ResponseHeader::default(),
                    deleted,
                    reaped_leases: reaped,
                })
            }
            Request::LeaseGrant(g) => {
                if g.ttl <= 0 || g.id < 0 {
                    return Err(Error::InvalidArgument("bad lease grant".into()));
                }
                let id = if g.id == 0 {
                    loop {
                        s.lease_counter += 1;
                        let id = (self.term << 32) | s.lease_counter;
                        if !s.leases.contains_key(&id) {
                            break id;
                        }
                    }
                } else if s.leases.contains_key(&g.id) {
                    return Err(Error::LeaseExists(g.id));
                } else {
                    g.id
                };
                s.leases.insert(id, (g.ttl, self.now + g.ttl * 1000));
                mutated = true;
                Response::LeaseGrant(LeaseGrantResponse {
                    header: ResponseHeader::default(),
                    id,
                    ttl: g.ttl,
                })
            }
            Request::LeaseRevoke(r) => {
                if !s.leases.contains_key(&r.id) {
                    return Err(Error::LeaseNotFound(r.id));
                }
                let deleted = revoke(&mut s, r.id);
                mutated = true;
                Response::LeaseRevoke(LeaseRevokeResponse {
                    header: ResponseHeader::default(),
                    deleted,
                })
            }
            Request::LeaseKeepAlive(k) => {
                if !s.live(k.id, self.now) {
                    return Err(Error::LeaseNotFound(k.id));
                }
                let ttl = s.leases[&k.id].0;
                s.leases.insert(k.id, (ttl, self.now + ttl * 1000));
                mutated = true;
                Response::LeaseKeepAlive(LeaseKeepAliveResponse {
                    header: ResponseHeader::default(),
                    id: k.id,
                    ttl,
                })
            }
            Request::SetPublicPrefix(_) => return Err(Error::Unimplemented("not modelled".into())),
        };
        let at = if mutated {
            self.state = s;
            self.revision = pending;
            self.history.push(self.state.kv.clone());
            TxId::new(self.term, pending)
        } else {
            self.committed
        };
        *resp.header_mut() = self.header(at);
        Ok(resp)
    }

    fn range(&self, s: &State, r: &RangeRequest) -> Result<RangeResponse> {
        if r.limit < 0 || r.revision < 0 {
            return Err(Error::InvalidArgument("negative".into()));
        }
        let sel = selector(&r.key, r.range_end.as_deref())?;
        let matches: Vec<KeyValue> = if r.revision > 0 {
            let compacted = self.index_compacted();
            if r.revision < compacted {
                return Err(Error::Compacted {
                    requested: r.revision,
                    compacted,
                });
            }
            if r.revision > self.index_head {
                return Err(Error::FutureRevision {
                    requested: r.revision,
                    head: self.index_head,
                });
            }
            self.history[r.revision as usize]
                .values()
                .filter(|v| sel(&v.key))
                .cloned()
                .collect()
        } else {
            s.kv.keys()
                .filter(|k| sel(k))
                .filter_map(|k| s.visible(k, self.now).cloned())
                .collect()
        };
        let count = matches.len() as i64;
        let kvs = if r.count_only {
            Vec::new()
        } else if r.limit > 0 {
            matches.into_iter().take(r.limit as usize).collect()
        } else {
            matches
        };
        Ok(RangeResponse {
            header: ResponseHeader::default(),
            kvs,
            more: r.limit > 0 && count > r.limit,
            count,
        })
    }

    fn put(&self, s: &mut State, r: &PutRequest, pending: Revision) -> Result<PutResponse> {
        if r.key.is_empty() {
            return Err(Error::InvalidArgument("empty key".into()));
        }
        if r.lease != 0 && !s.live(r.lease, self.now) {
            return Err(Error::LeaseNotFound(r.lease));
        }
        let prev = s.visible(&r.key, self.now).cloned();
        let kv = KeyValue {
            key: r.key.clone(),
            create_revision: prev.as_ref().map_or(pending, |p| p.create_revision),
            mod_revision: pending,
            version: prev.as_ref().map_or(1, |p| p.version + 1),
            value: r.value.clone(),
            lease: r.lease,
        };
        s.kv.insert(r.key.clone(), kv);
        Ok(PutResponse {
            header: ResponseHeader::default(),
            prev_kv: prev.filter(|_| r.prev_kv),
        })
    }

    fn delete(&self, s: &mut State, r: &DeleteRangeRequest) -> Result<DeleteRangeResponse> {
        let sel = selector(&r.key, r.range_end.as_deref())?;
        let doomed: Vec<KeyValue> = s
            .kv
            .keys()
            .filter(|k| sel(k))
            .filter_map(|k| s.visible(k, self.now).cloned())
            .collect();
        for kv in &doomed {
            s.kv.remove(&kv.key);
        }
        Ok(DeleteRangeResponse {
            header: ResponseHeader::default(),
            deleted: doomed.len() as i64,
            prev_kvs: if r.prev_kv { doomed } else { Vec::new() },
        })
    }

    fn compare(&self, s: &State, c: &Compare) -> bool {
        let cur = s.visible(&c.key, self.now);
        let ord = match c.target {
            CompareTarget::Version => cur.map_or(0, |v| v.version).cmp(&c.version.unwrap()),
            CompareTarget::Create => cur.map_or(0, |v| v.create_revision).cmp(&c.create_revision.unwrap()),
            CompareTarget::Mod => cur.map_or(0, |v| v.mod_revision).cmp(&c.mod_revision.unwrap()),
            CompareTarget::Value => cur
                .map_or(&[][..], |v| v.value.as_slice())
                .cmp(c.value.as_deref().unwrap()),
        };
        match c.result {
            CompareResult::Equal => ord.is_eq(),
            CompareResult::NotEqual => ord.is_ne(),
            CompareResult::Greater => ord.is_gt(),
            CompareResult::Less => ord.is_lt(),
        }
    }
}

/// etcd refuses a branch that writes the same key twice, counting a put
/// inside any deleted range as a second write.
fn check_branch(ops: &[RequestOp]) -> Result<()> {
    let mut puts = Vec::new();
    let mut dels = Vec::new();
    for op in ops {
        match op {
            RequestOp::RequestPut(p) => puts.push(p.key.clone()),
            RequestOp::RequestDeleteRange(d) => dels.push(selector(&d.key, d.range_end.as_deref())?),
            RequestOp::RequestTxn(_) => return Err(Error::Unimplemented("nested".into())),
            RequestOp::RequestRange(_) => {}
        }
    }
    let mut sorted = puts.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != puts.len() || puts.iter().any(|k| dels.iter().any(|d| d(k))) {
        return Err(Error::InvalidArgument("duplicate key in txn".into()));
    }
    Ok(())
}

/// Remove a lease and every stored key attached to it.
fn revoke(s: &mut State, id: LeaseId) -> i64 {
    let keys: Vec<Vec<u8>> = s.kv.iter().filter(|(_, v)| v.lease == id).map(|(k, _)| k.clone()).collect();
    for k in &keys {
        s.kv.remove(k);
    }
    s.leases.remove(&id);
    keys.len() as i64
}

/// Errors agree if they are the same variant; payloads are compared too
/// except for free-text messages.
pub fn same_error(a: &Error, b: &Error) -> bool {
    match (a, b) {
        (Error::InvalidArgument(_), Error::InvalidArgument(_)) | (Error::Unimplemented(_), Error::Unimplemented(_)) => true,
        _ => a == b,
    }
}

// ---------------------------------------------------------------------------
// Single-node harness
// ---------------------------------------------------------------------------

/// One leader with no peers, a scripted clock and manual signatures.
pub struct SingleNode {
    pub node: Node,
    pub now: Millis,
    pub service: ServiceKeys,
    /// Committed entries as they would be written to the ledger file.
    pub ledger: Vec<u8>,
    encoder: LedgerEncoder,
}

impl SingleNode {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let service = ServiceKeys::generate(&mut rng, "service");
        let keys = service.enroll_node(&mut rng, "n0");
        let mut o = NodeOptions::new(
            NodeId::new("n0"),
            Vec::new(),
            keys,
            service.service_cert.clone(),
            service.ledger_secret,
        );
        o.signature_interval = 1 << 40;
        o.auto_elect = false;
        o.seed = seed;
        let mut node = Node::new(o, 0);
        node.campaign(0);
        assert!(node.is_leader(), "a lone node elects itself");
        let encoder = LedgerEncoder::new(service.ledger_secret);
        SingleNode {
            node,
            now: 0,
            service,
            ledger: Vec::new(),
            encoder,
        }
    }

    pub fn model(&self) -> Model {
        Model::new(self.node.cluster_id(), self.node.member_id(), self.node.term())
    }

    pub fn advance(&mut self, ms: Millis) {
        self.now += ms;
        self.node.tick(self.now);
    }

    /// Sign, commit and index everything executed so far.
    /// Returns the events the index produced.
    pub fn sign(&mut self) -> Vec<Event> {
        self.node.emit_signature(self.now);
        let events = self.node.index_tick().expect("index applies committed entries in order");
        for e in self.node.take_committed() {
            self.ledger.extend(self.encoder.encode(&e));
        }
        events
    }

    pub fn handle(&mut self, req: &Request) -> Result<Response> {
        self.node.handle(req, self.now).map(|h| h.response)
    }
}

// ---------------------------------------------------------------------------
// Random workload
// ---------------------------------------------------------------------------

pub enum Step {
    Advance(Millis),
    Sign,
    Request(Request),
}

const KEYS: &[&str] = &["a", "a/1", "a/2", "b", "b/1", "c", "d", "e/x", "e/y", "f"];

pub fn key(rng: &mut ChaCha8Rng) -> Vec<u8> {
    KEYS.choose(rng).unwrap().as_bytes().to_vec()
}

fn value(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = rng.gen_range(0..6);
    (0..n).map(|_| rng.gen_range(b'a'..=b'd')).collect()
}

pub fn range_end(rng: &mut ChaCha8Rng, start: &[u8]) -> Option<Vec<u8>> {
    match rng.gen_range(0..4) {
        0 | 1 => None,
        2 => Some(vec![0]),
        _ => {
            let mut e = start.to_vec();
            *e.last_mut().unwrap() += 1;
            if rng.gen_bool(0.1) {
                e = b"a".to_vec();
            }
            Some(e)
        }
    }
}

fn lease_ref(rng: &mut ChaCha8Rng, known: &[LeaseId]) -> LeaseId {
    if known.is_empty() || rng.gen_bool(0.15) {
        [0, 3, 999][rng.gen_range(0..3)]
    } else {
        *known.choose(rng).unwrap()
    }
}

fn range_req(rng: &mut ChaCha8Rng, revision: Revision) -> RangeRequest {
    let key = key(rng);
    RangeRequest {
        range_end: range_end(rng, &key),
        key,
        limit: if rng.gen_bool(0.3) { rng.gen_range(1..4) } else { 0 },
        revision: if rng.gen_bool(0.15) { rng.gen_range(0..=revision + 2) } else { 0 },
        count_only: rng.gen_bool(0.1),
    }
}

fn put_req(rng: &mut ChaCha8Rng, known: &[LeaseId]) -> PutRequest {
    PutRequest {
        key: if rng.gen_bool(0.01) { Vec::new() } else { key(rng) },
        value: value(rng),
        lease: if rng.gen_bool(0.3) { lease_ref(rng, known) } else { 0 },
        prev_kv: rng.gen_bool(0.5),
    }
}

fn delete_req(rng: &mut ChaCha8Rng) -> DeleteRangeRequest {
    let key = key(rng);
    DeleteRangeRequest {
        range_end: range_end(rng, &key),
        key,
        prev_kv: rng.gen_bool(0.5),
    }
}

fn compare(rng: &mut ChaCha8Rng) -> Compare {
    let result = [CompareResult::Equal, CompareResult::NotEqual, CompareResult::Greater, CompareResult::Less]
        [rng.gen_range(0..4)];
    let k = key(rng);
    match rng.gen_range(0..4) {
        0 => Compare::version(k, result, rng.gen_range(0..4)),
        1 => Compare::create_revision(k, result, rng.gen_range(0..20)),
        2 => Compare::mod_revision(k, result, rng.gen_range(0..20)),
        _ => Compare::value(k, result, value(rng)),
    }
}

fn branch(rng: &mut ChaCha8Rng, known: &[LeaseId], revision: Revision) -> Vec<RequestOp> {
    (0..rng.gen_range(0..4))
        .map(|_| match rng.gen_range(0..3) {
            0 => RequestOp::RequestRange(range_req(rng, revision)),
            1 => RequestOp::RequestPut(put_req(rng, known)),
            _ => RequestOp::RequestDeleteRange(delete_req(rng)),
        })
        .collect()
}

/// Next random step given what the model currently knows.
pub fn random_step(rng: &mut ChaCha8Rng, model: &Model) -> Step {
    let known = model.lease_ids();
    let rev = model.revision;
    match rng.gen_range(0..100) {
        0..=5 => Step::Advance(rng.gen_range(1..2500)),
        6..=9 => Step::Sign,
        10..=39 => Step::Request(Request::Put(put_req(rng, &known))),
        40..=59 => Step::Request(Request::Range(range_req(rng, rev))),
        60..=66 => Step::Request(Request::DeleteRange(delete_req(rng))),
        67..=80 => Step::Request(Request::Txn(TxnRequest {
            compare: (0..rng.gen_range(0..3)).map(|_| compare(rng)).collect(),
            success: branch(rng, &known, rev),
            failure: branch(rng, &known, rev),
        })),
        81..=86 => Step::Request(Request::LeaseGrant(LeaseGrantRequest {
            ttl: if rng.gen_bool(0.05) { rng.gen_range(-1..1) } else { rng.gen_range(1..6) },
            id: if rng.gen_bool(0.3) { rng.gen_range(1..5) } else { 0 },
        })),
        87..=89 => Step::Request(Request::LeaseRevoke(LeaseRevokeRequest {
            id: lease_ref(rng, &known),
        })),
        90..=95 => Step::Request(Request::LeaseKeepAlive(LeaseKeepAliveRequest {
            id: lease_ref(rng, &known),
        })),
        _ => Step::Request(Request::Compaction(CompactionRequest {
            revision: rng.gen_range(0..=model.committed.revision + 1),
        })),
    }
}

/// Outcome of running the node and the model side by side.
pub struct OracleRun {
    pub steps: usize,
    pub requests: usize,
    pub mismatches: Vec<String>,
    pub final_revision: Revision,
    pub node: SingleNode,
    pub model: Model,
}

/// Drive `n` random steps through a single node and the model and record
/// every disagreement.
pub fn run_oracle(seed: u64, n: usize) -> OracleRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sut = SingleNode::new(seed);
    let mut model = sut.model();
    let mut requests = 0;
    let mut mismatches = Vec::new();
    let initial = sut.handle(&Request::Range(RangeRequest::key("a"))).unwrap();
    let want = model.apply(&Request::Range(RangeRequest::key("a"))).unwrap();
    if initial != want {
        mismatches.push(format!("initial read: node {initial:?}, model {want:?}"));
    }
    for i in 0..n {
        match random_step(&mut rng, &model) {
            Step::Advance(ms) => {
                sut.advance(ms);
                model.now = sut.now;
            }
            Step::Sign => {
                sut.sign();
                model.commit_all();
            }
            Step::Request(req) => {
                requests += 1;
                let got = sut.handle(&req);
                let want = model.apply(&req);
                let agree = match (&got, &want) {
                    (Ok(a), Ok(b)) => a == b,
                    (Err(a), Err(b)) => same_error(a, b),
                    _ => false,
                };
                if !agree {
                    mismatches.push(format!("step {i}: {req:?}\n  node:  {got:?}\n  model: {want:?}"));
                    if mismatches.len() >= 5 {
                        break;
                    }
                }
            }
        }
    }
    let all = sut.handle(&Request::Range(RangeRequest::prefix_from(Vec::new()))).ok();
    let visible = model.visible();
    if let Some(Response::Range(r)) = all {
        if r.kvs != visible {
            mismatches.push(format!("final state differs: node {:?}, model {:?}", r.kvs, visible));
        }
    }
    OracleRun {
        steps: n,
        requests,
        mismatches,
        final_revision: sut.node.revision(),
        node: sut,
        model,
    }
}
