//! Watches over a single node compared with the model's change log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lskv::index::{Event, EventKind};
use lskv::kv::KeyRange;
use lskv::proto::KeyValue;
use lskv::watch::{WatchEngine, WatchId, WatchState};
use lskv::{Error, Revision};

use super::{key, random_step, range_end, SingleNode, Step};

struct Tracked {
    id: WatchId,
    key: Vec<u8>,
    end: Option<Vec<u8>>,
    from: Revision,
    got: Vec<Event>,
    /// Set once the engine closes the watch.
    closed: Option<Option<Error>>,
    to_end: bool,
}

#[derive(Debug, Default)]
pub struct WatchCheck {
    pub watches: usize,
    pub historical: usize,
    /// Watches that stayed open to the end and were compared in full.
    pub complete: usize,
    pub events: usize,
    pub max_concurrent: usize,
    pub errors: Vec<String>,
}

type Change = (Revision, Vec<u8>, Option<KeyValue>);

fn as_change(e: &Event) -> Change {
    match e.kind {
        EventKind::Put => (e.revision(), e.kv.key.clone(), Some(e.kv.clone())),
        EventKind::Delete => (e.revision(), e.kv.key.clone(), None),
    }
}

fn poll(engine: &mut WatchEngine, sut: &SingleNode, w: &mut Tracked) {
    if w.closed.is_some() {
        return;
    }
    let (events, state) = engine.poll(w.id, sut.node.index()).expect("open watch");
    w.got.extend(events);
    if let WatchState::Cancelled { reason } = state {
        w.closed = Some(reason);
    }
}

/// Run `steps` random operations while up to `concurrent` watches with
/// random ranges and start points are opened, polled and closed.
pub fn run_watch_check(seed: u64, steps: usize, concurrent: usize) -> WatchCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sut = SingleNode::new(seed);
    let mut model = sut.model();
    let mut engine = WatchEngine::with_capacity(1 << 16);
    let mut open: Vec<Tracked> = Vec::new();
    let mut done: Vec<Tracked> = Vec::new();
    let mut check = WatchCheck::default();

    for _ in 0..steps {
        if open.len() < concurrent && rng.gen_bool(0.05) {
            let k = key(&mut rng);
            let end = range_end(&mut rng, &k).filter(|e| e.as_slice() == [0] || e.as_slice() > k.as_slice());
            let head = sut.node.index().head().revision;
            let start = if rng.gen_bool(0.5) && head > 0 { Some(rng.gen_range(1..=head + 1)) } else { None };
            let range = KeyRange::new(&k, end.as_deref()).expect("valid range");
            match engine.create(range, start, sut.node.index()) {
                Ok(id) => {
                    check.watches += 1;
                    if start.is_some_and(|s| s <= head) {
                        check.historical += 1;
                    }
                    open.push(Tracked {
                        id,
                        key: k,
                        end,
                        from: start.unwrap_or(head + 1),
                        got: Vec::new(),
                        closed: None,
                        to_end: false,
                    });
                }
                Err(e) => {
                    let want = Error::Compacted {
                        requested: start.unwrap_or(0),
                        compacted: model.index_compacted(),
                    };
                    if e != want {
                        check.errors.push(format!("create from {start:?} failed: {e}"));
                    }
                }
            }
            check.max_concurrent = check.max_concurrent.max(open.len());
        }
        if !open.is_empty() && rng.gen_bool(0.2) {
            let i = rng.gen_range(0..open.len());
            poll(&mut engine, &sut, &mut open[i]);
        }
        if !open.is_empty() && rng.gen_bool(0.01) {
            let w = open.swap_remove(rng.gen_range(0..open.len()));
            engine.cancel(w.id);
            done.push(w);
        }
        match random_step(&mut rng, &model) {
            Step::Advance(ms) => {
                sut.advance(ms);
                model.now = sut.now;
            }
            Step::Sign => {
                engine.publish(&sut.sign());
                model.commit_all();
            }
            Step::Request(req) => {
                let _ = sut.handle(&req);
                let _ = model.apply(&req);
            }
        }
    }
    engine.publish(&sut.sign());
    model.commit_all();
    let head = sut.node.index().head().revision;
    for w in open.iter_mut() {
        for _ in 0..4 {
            poll(&mut engine, &sut, w);
        }
        w.to_end = w.closed.is_none();
    }
    done.extend(open);

    for w in &done {
        check.events += w.got.len();
        let got: Vec<Change> = w.got.iter().map(as_change).collect();
        let want = model.changes(&w.key, w.end.as_deref(), w.from, head);
        if !w.got.windows(2).all(|p| p[0].revision() <= p[1].revision()) {
            check.errors.push(format!("watch {} delivered out of order", w.id));
        }
        if w.to_end {
            check.complete += 1;
            if got != want {
                check.errors.push(format!(
                    "watch {} on {:?}..{:?} from {}: got {} events, want {}; first difference at {:?}",
                    w.id,
                    String::from_utf8_lossy(&w.key),
                    w.end,
                    w.from,
                    got.len(),
                    want.len(),
                    got.iter().zip(&want).position(|(a, b)| a != b)
                ));
            }
        } else if got.len() > want.len() || got[..] != want[..got.len()] {
            check.errors.push(format!("closed watch {} delivered something off the change log", w.id));
        }
    }
    check
}
