//! Simulation drivers shared by the replication and acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lskv::client::{wait_for_commit, CommitStrategy, SimCommitApi, WaitOutcome};
use lskv::ledger::LedgerEntry;
use lskv::proto::{PutRequest, Request};
use lskv::replication::{classify_local, FaultAction, FaultScript, LocalStatus, Sim, SimConfig, SimReport, TxStatus};
use lskv::{NodeId, TxId};

pub fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .build()
        .expect("runtime")
        .block_on(f)
}

fn put(i: usize) -> Request {
    Request::Put(PutRequest::new(format!("k{}", i % 32), format!("v{i}")))
}

pub fn apply(sim: &mut Sim, action: &FaultAction) {
    match action {
        FaultAction::Crash { node } => {
            sim.crash(&NodeId::new(node));
        }
        FaultAction::Restart { node } => {
            sim.restart(&NodeId::new(node));
        }
        FaultAction::Partition { groups } => {
            let groups: Vec<Vec<NodeId>> = groups.iter().map(|g| g.iter().map(NodeId::new).collect()).collect();
            sim.partition(&groups);
        }
        FaultAction::Heal => sim.heal(),
        FaultAction::Campaign { node } => sim.campaign(&NodeId::new(node)),
        FaultAction::Write { node, key, value } => {
            let _ = sim.submit(&NodeId::new(node), &Request::Put(PutRequest::new(key.as_str(), value.as_str())));
        }
        FaultAction::DropRate { rate } => sim.set_drop_rate(*rate),
    }
}

/// Play a random fault schedule with background writes, calling `check`
/// every `every` ms. Leaves the simulation unsettled.
pub fn drive(seed: u64, nodes: usize, duration: i64, every: i64, mut check: impl FnMut(&Sim)) -> Sim {
    let script = FaultScript::random(seed, nodes, duration);
    let mut sim = Sim::new(script.config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut events = script.events.into_iter().peekable();
    let mut writes = 0;
    for t in 1..=duration {
        while let Some(e) = events.next_if(|e| e.at <= t) {
            apply(&mut sim, &e.action);
        }
        if rng.gen_bool(0.3) {
            let to = sim.ids()[rng.gen_range(0..nodes)].clone();
            writes += 1;
            let _ = sim.submit(&to, &put(writes));
        }
        sim.step();
        if t % every == 0 {
            check(&sim);
        }
    }
    sim
}

/// Every commit point is a signature entry covering exactly the committed ID.
pub fn check_signature_gating(sim: &Sim) -> Result<(), String> {
    for n in sim.up_nodes() {
        if n.commit_index() == 0 {
            continue;
        }
        let entry = n.entry(n.commit_index()).ok_or("commit index beyond log")?;
        match &entry.payload {
            LedgerEntry::Signature(s) if s.covers_up_to == n.committed() => {}
            other => {
                return Err(format!(
                    "{} committed {} at an entry that is not its covering signature: {other:?}",
                    n.id(),
                    n.committed()
                ))
            }
        }
    }
    Ok(())
}

/// Local classification from a node's committed ID and term history must
/// match what that node reports, for acknowledged IDs and their neighbours.
pub fn check_classification(sim: &Sim) -> Result<usize, String> {
    let mut checked = 0;
    for n in sim.up_nodes() {
        let c = n.committed();
        let h = n.term_history();
        for r in 1..=c.revision {
            if h.term_of(r) != n.committed_term_of(r) {
                return Err(format!("{}: history says term {:?} for revision {r}", n.id(), h.term_of(r)));
            }
        }
        for &a in sim.acked() {
            for t in [a, TxId::new(a.term + 1, a.revision), TxId::new(a.term - 1, a.revision), TxId::new(a.term, a.revision + 1)] {
                let node = n.tx_status(t);
                let local = classify_local(t, c, Some(&h));
                let want = if node.is_terminal() { node } else { TxStatus::Pending };
                if local != LocalStatus::Known(want) {
                    return Err(format!("{}: {t} is {node:?} on the node, {local:?} locally (committed {c})", n.id()));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Heal the network and restart crashed nodes without advancing time.
pub fn calm(sim: &mut Sim) {
    sim.heal();
    sim.set_drop_rate(0.0);
    for id in sim.ids().to_vec() {
        sim.restart(&id);
    }
}

/// Resolve `ids` with `strategy` on a fork of `sim`.
pub fn wait_on_fork(sim: &Sim, ids: &[TxId], strategy: CommitStrategy) -> lskv::Result<WaitOutcome> {
    let mut fork = sim.clone();
    let mut api = SimCommitApi { sim: &mut fork, via: None };
    block_on(wait_for_commit(&mut api, ids, strategy, 60_000))
}

/// Step until `pred` holds, calling `hook` after every step.
pub fn run_until_hooked(
    sim: &mut Sim,
    max_ms: i64,
    hook: &mut dyn FnMut(&mut Sim),
    pred: impl Fn(&Sim) -> bool,
) -> bool {
    for _ in 0..max_ms {
        if pred(sim) {
            return true;
        }
        sim.step();
        hook(sim);
    }
    pred(sim)
}

/// A three-node trace with `elections` forced leader changes. In every term
/// `per_term` writes commit, then `lost` more reach only the old leader,
/// which is isolated until the others elect a successor.
pub fn election_trace(seed: u64, per_term: usize, elections: usize, lost: usize) -> Sim {
    election_trace_with(seed, per_term, elections, lost, &mut |_| {})
}

pub fn election_trace_with(
    seed: u64,
    per_term: usize,
    elections: usize,
    lost: usize,
    hook: &mut dyn FnMut(&mut Sim),
) -> Sim {
    let mut sim = Sim::new(SimConfig {
        nodes: 3,
        seed,
        status_check_every: 50,
        ..SimConfig::default()
    });
    assert!(run_until_hooked(&mut sim, 5_000, hook, |s| s.leader().is_some()), "no first leader");
    let mut written = 0;
    for round in 0..=elections {
        let leader = sim.leader().expect("leader");
        for _ in 0..per_term {
            written += 1;
            sim.submit(&leader, &put(written)).expect("leader accepts writes");
            sim.step();
            hook(&mut sim);
        }
        let target = sim.acked().last().copied().expect("acked");
        assert!(
            run_until_hooked(&mut sim, 5_000, hook, |s| s.node(&leader).is_some_and(|n| n.committed() >= target)),
            "round {round} did not commit"
        );
        if round == elections {
            break;
        }
        for _ in 0..lost {
            written += 1;
            sim.submit(&leader, &put(written)).expect("leader accepts writes");
        }
        let others: Vec<NodeId> = sim.ids().iter().filter(|i| **i != leader).cloned().collect();
        sim.partition(&[vec![leader.clone()], others.clone()]);
        let old_term = sim.node(&leader).expect("up").term();
        let successor = others[round % others.len()].clone();
        sim.campaign(&successor);
        assert!(
            run_until_hooked(&mut sim, 5_000, hook, |s| s.leader().is_some_and(|l| l != leader)
                && s.node(&s.leader().unwrap()).unwrap().term() > old_term),
            "round {round} elected nobody"
        );
        sim.heal();
        assert!(
            run_until_hooked(&mut sim, 5_000, hook, |s| !s.node(&leader).unwrap().is_leader()),
            "old leader kept leading"
        );
    }
    sim
}

pub fn settle_and_finish(mut sim: Sim) -> (Sim, SimReport) {
    let settled = sim.settle(20_000);
    let report = sim.finish(settled);
    (sim, report)
}
