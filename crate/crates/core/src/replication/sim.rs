//! Deterministic cluster simulator.
//!
//! Runs several [`Node`]s in one thread with a seeded network that delays,
//! drops and partitions messages, advancing a shared clock one millisecond
//! per step. Faults come from a [`FaultScript`], either written by hand as
//! JSON or generated from a seed. After every step the simulator checks that
//! no two nodes ever commit different terms for the same revision.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::message::PeerMessage;
use super::node::{Handled, HardState, Node, NodeOptions, Outbound, Role};
use super::status::{TermHistory, TxStatus};
use crate::crypto::ServiceKeys;
use crate::error::{Error, Result};
use crate::proto::{PutRequest, Request};
use crate::types::{Millis, NodeId, Revision, Term, TxId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub nodes: usize,
    pub seed: u64,
    pub min_delay: Millis,
    pub max_delay: Millis,
    pub drop_rate: f64,
    pub signature_interval: Millis,
    pub auto_elect: bool,
    /// Check per-node status transitions of acknowledged writes this often.
    pub status_check_every: Millis,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            nodes: 3,
            seed: 0,
            min_delay: 1,
            max_delay: 5,
            drop_rate: 0.0,
            signature_interval: 100,
            auto_elect: true,
            status_check_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum FaultAction {
    Crash { node: String },
    Restart { node: String },
    /// Nodes in different groups cannot talk. Unlisted nodes form their own group.
    Partition { groups: Vec<Vec<String>> },
    Heal,
    Campaign { node: String },
    Write { node: String, key: String, value: String },
    DropRate { rate: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at: Millis,
    #[serde(flatten)]
    pub action: FaultAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultScript {
    #[serde(default)]
    pub config: SimConfig,
    pub duration: Millis,
    /// Chance per millisecond that a background client writes through a random node.
    #[serde(default)]
    pub write_rate: f64,
    #[serde(default)]
    pub events: Vec<FaultEvent>,
}

impl FaultScript {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// A random schedule of crashes, restarts, partitions and elections.
    pub fn random(seed: u64, nodes: usize, duration: Millis) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
        let name = |i: usize| format!("n{i}");
        let mut events = Vec::new();
        let mut at = rng.gen_range(100..300);
        while at < duration - 200 {
            let target = name(rng.gen_range(0..nodes));
            let action = match rng.gen_range(0..10) {
                0..=2 => FaultAction::Crash { node: target },
                3..=4 => FaultAction::Restart { node: target },
                5 => {
                    let mut ids: Vec<String> = (0..nodes).map(name).collect();
                    let cut = rng.gen_range(1..nodes);
                    for i in (1..ids.len()).rev() {
                        ids.swap(i, rng.gen_range(0..=i));
                    }
                    let rest = ids.split_off(cut);
                    FaultAction::Partition { groups: vec![ids, rest] }
                }
                6 => FaultAction::Heal,
                7..=8 => FaultAction::Campaign { node: target },
                _ => FaultAction::DropRate {
                    rate: [0.0, 0.02, 0.1][rng.gen_range(0..3)],
                },
            };
            events.push(FaultEvent { at, action });
            at += rng.gen_range(50..400);
        }
        FaultScript {
            config: SimConfig {
                nodes,
                seed,
                status_check_every: 20,
                ..SimConfig::default()
            },
            duration,
            write_rate: 0.3,
            events,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub acked: Vec<TxId>,
    /// Status of each acknowledged ID on the final leader.
    pub statuses: Vec<(TxId, TxStatus)>,
    pub committed: TxId,
    pub term_history: TermHistory,
    pub leader: Option<NodeId>,
    pub settled: bool,
    pub violations: Vec<String>,
}

impl SimReport {
    pub fn count(&self, status: TxStatus) -> usize {
        self.statuses.iter().filter(|(_, s)| *s == status).count()
    }
}

#[derive(Clone)]
struct InFlight {
    from: NodeId,
    to: NodeId,
    msg: PeerMessage,
}

/// Cloning forks the whole simulation, network and random state included.
#[derive(Clone)]
pub struct Sim {
    cfg: SimConfig,
    now: Millis,
    ids: Vec<NodeId>,
    service: ServiceKeys,
    opts: BTreeMap<NodeId, NodeOptions>,
    nodes: BTreeMap<NodeId, Option<Node>>,
    saved: BTreeMap<NodeId, HardState>,
    queue: BTreeMap<(Millis, u64), InFlight>,
    seq: u64,
    groups: Option<BTreeMap<NodeId, usize>>,
    rng: ChaCha8Rng,
    committed_terms: BTreeMap<Revision, Term>,
    checked: BTreeMap<NodeId, Revision>,
    observed: BTreeMap<NodeId, BTreeMap<TxId, TxStatus>>,
    violations: Vec<String>,
    acked: Vec<TxId>,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let service = ServiceKeys::generate(&mut rng, "service");
        let ids: Vec<NodeId> = (0..cfg.nodes).map(|i| NodeId::new(format!("n{i}"))).collect();
        let mut opts = BTreeMap::new();
        let mut nodes = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            let keys = service.enroll_node(&mut rng, id.as_str());
            let peers = ids.iter().filter(|p| *p != id).cloned().collect();
            let mut o = NodeOptions::new(id.clone(), peers, keys, service.service_cert.clone(), service.ledger_secret);
            o.signature_interval = cfg.signature_interval;
            o.auto_elect = cfg.auto_elect;
            o.seed = cfg.seed.wrapping_mul(31).wrapping_add(i as u64);
            nodes.insert(id.clone(), Some(Node::new(o.clone(), 0)));
            opts.insert(id.clone(), o);
        }
        Sim {
            saved: ids.iter().map(|i| (i.clone(), HardState::default())).collect(),
            checked: ids.iter().map(|i| (i.clone(), 0)).collect(),
            observed: ids.iter().map(|i| (i.clone(), BTreeMap::new())).collect(),
            cfg,
            now: 0,
            ids,
            service,
            opts,
            nodes,
            queue: BTreeMap::new(),
            seq: 0,
            groups: None,
            rng,
            committed_terms: BTreeMap::new(),
            violations: Vec::new(),
            acked: Vec::new(),
        }
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn service(&self) -> &ServiceKeys {
        &self.service
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id).and_then(Option::as_ref)
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(id).and_then(Option::as_mut)
    }

    pub fn up_nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter_map(Option::as_ref)
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn acked(&self) -> &[TxId] {
        &self.acked
    }

    pub fn set_drop_rate(&mut self, rate: f64) {
        self.cfg.drop_rate = rate;
    }

    /// The leader with the highest term among running nodes.
    pub fn leader(&self) -> Option<NodeId> {
        self.up_nodes()
            .filter(|n| n.role() == Role::Leader)
            .max_by_key(|n| n.term())
            .map(|n| n.id().clone())
    }

    fn connected(&self, a: &NodeId, b: &NodeId) -> bool {
        match &self.groups {
            None => true,
            Some(g) => g.get(a) == g.get(b),
        }
    }

    fn enqueue(&mut self, from: &NodeId, out: Vec<Outbound>) {
        for (to, msg) in out {
            if !self.connected(from, &to) || self.rng.gen_bool(self.cfg.drop_rate.clamp(0.0, 1.0)) {
                continue;
            }
            let delay = self.rng.gen_range(self.cfg.min_delay..=self.cfg.max_delay.max(self.cfg.min_delay));
            self.seq += 1;
            self.queue.insert(
                (self.now + delay, self.seq),
                InFlight {
                    from: from.clone(),
                    to,
                    msg,
                },
            );
        }
    }

    fn persist(&mut self, id: &NodeId) {
        if let Some(hs) = self.node_mut(id).and_then(Node::take_hard_state) {
            self.saved.insert(id.clone(), hs);
        }
    }

    /// Advance the clock by one millisecond.
    pub fn step(&mut self) {
        self.now += 1;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.now {
                break;
            }
            let m = entry.remove();
            if !self.connected(&m.from, &m.to) {
                continue;
            }
            let now = self.now;
            let Some(node) = self.node_mut(&m.to) else { continue };
            let out = node.step(&m.from, m.msg, now);
            self.persist(&m.to);
            self.enqueue(&m.to, out);
        }
        for id in self.ids.clone() {
            let now = self.now;
            let Some(node) = self.node_mut(&id) else { continue };
            let out = node.tick(now);
            self.persist(&id);
            self.enqueue(&id, out);
        }
        self.check_safety();
        if self.cfg.status_check_every > 0 && self.now % self.cfg.status_check_every == 0 {
            self.check_statuses();
        }
    }

    pub fn run(&mut self, ms: Millis) {
        for _ in 0..ms {
            self.step();
        }
    }

    /// Step until `pred` holds or `max_ms` elapse. Returns whether it held.
    pub fn run_until(&mut self, max_ms: Millis, mut pred: impl FnMut(&Sim) -> bool) -> bool {
        for _ in 0..max_ms {
            if pred(self) {
                return true;
            }
            self.step();
        }
        pred(self)
    }

    fn check_safety(&mut self) {
        for id in &self.ids {
            let Some(node) = self.nodes[id].as_ref() else { continue };
            let from = self.checked[id];
            let upto = node.committed().revision;
            if upto < from {
                self.violations
                    .push(format!("{id} committed revision went back from {from} to {upto}"));
            }
            for r in from + 1..=upto {
                let Some(t) = node.committed_term_of(r) else {
                    self.violations.push(format!("{id} has no term for committed revision {r}"));
                    continue;
                };
                match self.committed_terms.get(&r) {
                    Some(&seen) if seen != t => self.violations.push(format!(
                        "revision {r} committed in term {seen} elsewhere but in term {t} on {id}"
                    )),
                    Some(_) => {}
                    None => {
                        self.committed_terms.insert(r, t);
                    }
                }
            }
            self.checked.insert(id.clone(), upto.max(from));
        }
    }

    fn check_statuses(&mut self) {
        for id in &self.ids {
            let Some(node) = self.nodes[id].as_ref() else { continue };
            let seen = self.observed.get_mut(id).expect("every node is tracked");
            for &txid in &self.acked {
                let now = node.tx_status(txid);
                let before = seen.get(&txid).copied().unwrap_or(TxStatus::Unknown);
                let allowed = before == now
                    || matches!(
                        (before, now),
                        (TxStatus::Unknown, _) | (TxStatus::Pending, TxStatus::Committed | TxStatus::Invalid)
                    );
                if !allowed {
                    self.violations
                        .push(format!("{id} moved {txid} from {before:?} to {now:?}"));
                }
                seen.insert(txid, now);
            }
        }
    }

    fn unavailable(&self) -> usize {
        self.nodes
            .values()
            .filter(|n| n.as_ref().is_none_or(Node::is_recovering))
            .count()
    }

    /// Crash a node, losing everything but its hard state. Refused if it would
    /// leave more than a minority down or recovering.
    pub fn crash(&mut self, id: &NodeId) -> bool {
        let f = (self.cfg.nodes - 1) / 2;
        match self.nodes.get(id) {
            Some(Some(n)) if !n.is_recovering() && self.unavailable() < f => {}
            _ => return false,
        }
        self.nodes.insert(id.clone(), None);
        true
    }

    pub fn restart(&mut self, id: &NodeId) -> bool {
        if !matches!(self.nodes.get(id), Some(None)) {
            return false;
        }
        let node = Node::restart(self.opts[id].clone(), self.saved[id].clone(), self.now);
        self.nodes.insert(id.clone(), Some(node));
        self.persist(id);
        self.checked.insert(id.clone(), 0);
        self.observed.insert(id.clone(), BTreeMap::new());
        true
    }

    pub fn partition(&mut self, groups: &[Vec<NodeId>]) {
        let mut map = BTreeMap::new();
        for (g, members) in groups.iter().enumerate() {
            for m in members {
                map.insert(m.clone(), g);
            }
        }
        let mut next = groups.len();
        for id in &self.ids {
            map.entry(id.clone()).or_insert_with(|| {
                next += 1;
                next
            });
        }
        self.groups = Some(map);
    }

    pub fn heal(&mut self) {
        self.groups = None;
    }

    pub fn campaign(&mut self, id: &NodeId) {
        let now = self.now;
        if let Some(node) = self.node_mut(id) {
            let out = node.campaign(now);
            self.persist(id);
            self.enqueue(id, out);
        }
    }

    /// Submit a client request at `id`, forwarding mutations to the leader it
    /// knows. Acknowledged transaction IDs are recorded.
    pub fn submit(&mut self, id: &NodeId, req: &Request) -> Result<Handled> {
        let now = self.now;
        let node = self.node_mut(id).ok_or_else(|| Error::Unavailable(format!("{id} is down")))?;
        let out = match node.handle(req, now) {
            Err(Error::NotLeader { leader: Some(l) }) => {
                if !self.connected(id, &l) {
                    return Err(Error::Unavailable(format!("{id} cannot reach leader {l}")));
                }
                self.node_mut(&l)
                    .ok_or_else(|| Error::Unavailable(format!("leader {l} is down")))?
                    .handle(req, now)
            }
            other => other,
        }?;
        if let Some(txid) = out.txid {
            self.acked.push(txid);
        }
        Ok(out)
    }

    /// Heal the network, restart crashed nodes and run until every node has
    /// caught up with a leader whose whole log is committed.
    pub fn settle(&mut self, max_ms: Millis) -> bool {
        self.heal();
        self.cfg.drop_rate = 0.0;
        for id in self.ids.clone() {
            self.restart(&id);
        }
        self.run_until(max_ms, |s| {
            let Some(l) = s.leader().and_then(|l| s.node(&l)) else {
                return false;
            };
            l.commit_index() == l.last_index()
                && s.up_nodes().count() == s.ids.len()
                && s.up_nodes()
                    .all(|n| !n.is_recovering() && n.commit_index() == l.commit_index() && n.term() == l.term())
        })
    }

    fn apply(&mut self, action: &FaultAction) {
        let id = |s: &str| NodeId::new(s);
        match action {
            FaultAction::Crash { node } => {
                self.crash(&id(node));
            }
            FaultAction::Restart { node } => {
                self.restart(&id(node));
            }
            FaultAction::Partition { groups } => {
                let groups: Vec<Vec<NodeId>> = groups.iter().map(|g| g.iter().map(|n| id(n)).collect()).collect();
                self.partition(&groups);
            }
            FaultAction::Heal => self.heal(),
            FaultAction::Campaign { node } => self.campaign(&id(node)),
            FaultAction::Write { node, key, value } => {
                let _ = self.submit(&id(node), &Request::Put(PutRequest::new(key.as_str(), value.as_str())));
            }
            FaultAction::DropRate { rate } => self.cfg.drop_rate = *rate,
        }
    }

    /// Run a script to completion, settle, and check the outcome.
    pub fn run_script(script: &FaultScript) -> SimReport {
        let mut sim = Sim::new(script.config.clone());
        let mut events = script.events.clone();
        events.sort_by_key(|e| e.at);
        let mut events = events.into_iter().peekable();
        let mut writes = 0u64;
        for t in 1..=script.duration {
            while let Some(e) = events.next_if(|e| e.at <= t) {
                sim.apply(&e.action);
            }
            if script.write_rate > 0.0 && sim.rng.gen_bool(script.write_rate.min(1.0)) {
                let target = sim.ids[sim.rng.gen_range(0..sim.ids.len())].clone();
                writes += 1;
                let req = Request::Put(PutRequest::new(format!("k{}", writes % 16), writes.to_string()));
                let _ = sim.submit(&target, &req);
            }
            sim.step();
        }
        let settled = sim.settle(20_000);
        sim.finish(settled)
    }

    /// Final checks once the cluster has settled.
    pub fn finish(&mut self, settled: bool) -> SimReport {
        self.check_statuses();
        let mut report = SimReport {
            acked: self.acked.clone(),
            settled,
            ..SimReport::default()
        };
        if !settled {
            self.violations.push("cluster did not settle".into());
        }
        if let Some(lid) = self.leader() {
            let leader = self.node(&lid).expect("leader is up");
            report.committed = leader.committed();
            report.term_history = leader.term_history();
            report.leader = Some(lid.clone());
            let mut lost = Vec::new();
            for (&r, &t) in &self.committed_terms {
                if leader.committed_term_of(r) != Some(t) {
                    lost.push(format!("committed revision {r} of term {t} lost by final leader {lid}"));
                }
            }
            for &txid in &self.acked {
                let s = leader.tx_status(txid);
                if settled && !s.is_terminal() {
                    lost.push(format!("{txid} is still {s:?} after settling"));
                }
                for n in self.up_nodes() {
                    if settled && n.tx_status(txid) != s {
                        lost.push(format!("{} reports {:?} for {txid}, leader reports {s:?}", n.id(), n.tx_status(txid)));
                    }
                }
                report.statuses.push((txid, s));
            }
            let h = &report.term_history;
            for w in h.terms.windows(2) {
                if !(w[0].term < w[1].term && w[0].revision < w[1].revision) {
                    lost.push(format!("term history not strictly increasing: {:?}", h.terms));
                }
            }
            for (&r, &t) in &self.committed_terms {
                if h.term_of(r) != Some(t) {
                    lost.push(format!("term history places revision {r} outside term {t}"));
                }
            }
            self.violations.extend(lost);
        }
        report.violations = self.violations.clone();
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(nodes: usize, seed: u64) -> Sim {
        Sim::new(SimConfig {
            nodes,
            seed,
            auto_elect: false,
            ..SimConfig::default()
        })
    }

    fn put(sim: &mut Sim, at: &str, key: &str) -> Result<TxId> {
        sim.submit(&NodeId::new(at), &Request::Put(PutRequest::new(key, "v")))
            .map(|h| h.txid.expect("put mutates"))
    }

    #[test]
    fn leader_assigns_consecutive_revisions_and_commits_at_signature() {
        let mut s = Sim::new(SimConfig {
            nodes: 3,
            seed: 1,
            auto_elect: false,
            signature_interval: 1000,
            ..SimConfig::default()
        });
        let (n0, n1) = (NodeId::new("n0"), NodeId::new("n1"));
        s.campaign(&n0);
        s.run(20);
        assert_eq!(s.leader(), Some(n0.clone()));
        let ids: Vec<TxId> = (0..3).map(|i| put(&mut s, "n0", &format!("k{i}")).unwrap()).collect();
        assert_eq!(ids, vec![TxId::new(1, 1), TxId::new(1, 2), TxId::new(1, 3)]);
        assert_eq!(s.node(&n0).unwrap().tx_status(ids[0]), TxStatus::Pending);
        s.run(200);
        assert_eq!(s.node(&n1).unwrap().revision(), 3, "replicated to a majority");
        assert_eq!(s.node(&n0).unwrap().tx_status(ids[2]), TxStatus::Pending, "but not yet signed");
        s.run(850);
        assert_eq!(s.node(&n0).unwrap().tx_status(ids[2]), TxStatus::Committed);
        assert_eq!(s.node(&n0).unwrap().committed(), TxId::new(1, 3));
        assert!(s.violations().is_empty(), "{:?}", s.violations());
    }

    #[test]
    fn follower_forwards_and_reports_not_leader_without_leader() {
        let mut s = sim(3, 2);
        assert!(matches!(put(&mut s, "n1", "k"), Err(Error::Unavailable(_))));
        s.campaign(&NodeId::new("n0"));
        s.run(20);
        let a = put(&mut s, "n1", "k").unwrap();
        let b = put(&mut s, "n0", "k").unwrap();
        assert_eq!((a.revision, b.revision), (1, 2));
    }

    #[test]
    fn lost_suffix_is_invalid_after_election() {
        let mut s = sim(3, 3);
        let (n0, n1, n2) = (NodeId::new("n0"), NodeId::new("n1"), NodeId::new("n2"));
        s.campaign(&n0);
        s.run(20);
        for i in 0..7 {
            put(&mut s, "n0", &format!("k{i}")).unwrap();
        }
        s.run(200);
        assert_eq!(s.node(&n1).unwrap().committed().revision, 7);
        s.partition(&[vec![n0.clone()], vec![n1.clone(), n2.clone()]]);
        let lost: Vec<TxId> = (0..2).map(|i| put(&mut s, "n0", &format!("x{i}")).unwrap()).collect();
        assert_eq!(lost, vec![TxId::new(1, 8), TxId::new(1, 9)]);
        s.campaign(&n1);
        s.run(20);
        assert_eq!(s.leader(), Some(n1.clone()));
        let w = put(&mut s, "n1", "y").unwrap();
        assert_eq!(w, TxId::new(2, 8));
        s.heal();
        assert!(s.settle(2000));
        let report = s.finish(true);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        for n in s.up_nodes() {
            assert_eq!(n.tx_status(lost[0]), TxStatus::Invalid);
            assert_eq!(n.tx_status(lost[1]), TxStatus::Invalid);
            assert_eq!(n.tx_status(w), TxStatus::Committed);
        }
        assert_eq!(report.term_history, TermHistory::new(vec![TxId::new(1, 1), TxId::new(2, 8)]));
    }

    #[test]
    fn failed_election_skips_a_term() {
        let mut s = sim(3, 4);
        let (n0, n1, n2) = (NodeId::new("n0"), NodeId::new("n1"), NodeId::new("n2"));
        s.campaign(&n0);
        s.run(20);
        put(&mut s, "n0", "a").unwrap();
        s.run(200);
        s.partition(&[vec![n2.clone()], vec![n0.clone(), n1.clone()]]);
        s.campaign(&n2);
        s.run(20);
        s.heal();
        s.crash(&n0);
        s.campaign(&n1);
        s.run(20);
        assert_eq!(s.leader(), None, "n2 already voted for itself in term 2");
        s.campaign(&n1);
        s.run(50);
        assert_eq!(s.leader(), Some(n1.clone()));
        let w = put(&mut s, "n1", "b").unwrap();
        assert_eq!(w.term, 3);
        assert!(s.settle(3000));
        let r = s.finish(true);
        assert!(r.violations.is_empty(), "{:?}", r.violations);
        let terms: Vec<Term> = r.term_history.terms.iter().map(|t| t.term).collect();
        assert_eq!(terms, vec![1, 3]);
    }

    #[test]
    fn crash_limit_is_enforced() {
        let mut s = sim(3, 5);
        assert!(s.crash(&NodeId::new("n0")));
        assert!(!s.crash(&NodeId::new("n1")));
        assert!(s.restart(&NodeId::new("n0")));
        assert!(!s.crash(&NodeId::new("n1")), "a recovering node still counts");
    }

    #[test]
    fn scripts_parse_from_json() {
        let js = r#"{
            "config": {"nodes": 3, "seed": 9},
            "duration": 1500,
            "write_rate": 0.2,
            "events": [
                {"at": 400, "action": "crash", "node": "n0"},
                {"at": 700, "action": "partition", "groups": [["n1"], ["n2"]]},
                {"at": 900, "action": "heal"},
                {"at": 1000, "action": "restart", "node": "n0"}
            ]
        }"#;
        let script = FaultScript::from_json(js).unwrap();
        assert_eq!(script.events.len(), 4);
        let report = Sim::run_script(&script);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        assert!(report.count(TxStatus::Committed) > 0);
    }

    #[test]
    fn random_schedules_are_safe() {
        for seed in 0..6 {
            let nodes = if seed % 2 == 0 { 3 } else { 5 };
            let report = Sim::run_script(&FaultScript::random(seed, nodes, 2000));
            assert!(report.violations.is_empty(), "seed {seed}: {:?}", report.violations);
        }
    }
}
