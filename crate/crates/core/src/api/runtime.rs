//! The task that owns a replica.
//!
//! All state lives in one task: the [`Node`], the watch engine and the ledger
//! file. HTTP handlers and peer connections talk to it through channels, so
//! requests are applied in arrival order and no lock is held across I/O.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use super::transport::PeerSenders;
use crate::crypto::NodeKeys;
use crate::error::{Error, Result};
use crate::index::Event;
use crate::kv::KeyRange;
use crate::lease::{Clock, SystemClock};
use crate::ledger::LedgerFile;
use crate::proto::{Request, ResponseHeader, SetPublicPrefixRequest};
use crate::receipt::Receipt;
use crate::replication::{Envelope, Handled, HardState, Node, NodeOptions, PeerMessage, Role, TermHistory, TxStatus};
use crate::types::{LogIndex, Millis, NodeId, Revision, Term, TxId};
use crate::watch::{WatchEngine, WatchId, WatchState};

const FORWARD_TIMEOUT: Millis = 5_000;
const SESSION_TIMEOUT: Millis = 5_000;
const TICK: Duration = Duration::from_millis(2);

pub struct RuntimeConfig {
    pub node: NodeOptions,
    /// Where the ledger and hard state are written. `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub index_tick: Millis,
    pub public_prefixes: Vec<Vec<u8>>,
    pub admin: Option<NodeKeys>,
}

/// Snapshot of a node's replication state, served on `/node/info`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub node_id: NodeId,
    pub role: Role,
    pub term: Term,
    pub leader: Option<NodeId>,
    pub recovering: bool,
    pub last_index: LogIndex,
    pub commit_index: LogIndex,
    pub committed: TxId,
    pub revision: Revision,
    pub index_head: TxId,
    pub lease_clock: Millis,
    pub cluster_id: String,
    pub member_id: String,
    pub watches: usize,
}

type Reply<T> = oneshot::Sender<T>;

enum Command {
    Client {
        req: Request,
        session: Option<TxId>,
        reply: Reply<Result<Handled>>,
    },
    Status {
        txid: TxId,
        reply: Reply<(TxStatus, ResponseHeader)>,
    },
    Committed {
        reply: Reply<ResponseHeader>,
    },
    TermHistory {
        reply: Reply<(TermHistory, ResponseHeader)>,
    },
    Receipt {
        txid: TxId,
        reply: Reply<Result<(Receipt, ResponseHeader)>>,
    },
    WatchCreate {
        range: KeyRange,
        start: Option<Revision>,
        reply: Reply<Result<(WatchId, ResponseHeader)>>,
    },
    WatchPoll {
        id: WatchId,
        reply: Reply<Result<(Vec<Event>, WatchState, ResponseHeader)>>,
    },
    WatchCancel {
        id: WatchId,
    },
    Info {
        reply: Reply<NodeInfo>,
    },
}

/// Cheap, cloneable access to a running replica.
#[derive(Clone)]
pub struct NodeHandle {
    tx: mpsc::Sender<Command>,
    index_head: watch::Receiver<Revision>,
    node_id: NodeId,
}

fn gone() -> Error {
    Error::Unavailable("node is shutting down".into())
}

impl NodeHandle {
    pub fn node_id(&self) -> &NodeId {
        &self.node_id
    }

    async fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).await.map_err(|_| gone())?;
        rx.await.map_err(|_| gone())
    }

    /// Execute a client request. `session` is the last transaction the
    /// caller saw acknowledged; the request waits until this node has it.
    pub async fn request(&self, req: Request, session: Option<TxId>) -> Result<Handled> {
        self.call(|reply| Command::Client { req, session, reply }).await?
    }

    pub async fn tx_status(&self, txid: TxId) -> Result<(TxStatus, ResponseHeader)> {
        self.call(|reply| Command::Status { txid, reply }).await
    }

    pub async fn committed(&self) -> Result<ResponseHeader> {
        self.call(|reply| Command::Committed { reply }).await
    }

    pub async fn term_history(&self) -> Result<(TermHistory, ResponseHeader)> {
        self.call(|reply| Command::TermHistory { reply }).await
    }

    pub async fn receipt(&self, txid: TxId) -> Result<(Receipt, ResponseHeader)> {
        self.call(|reply| Command::Receipt { txid, reply }).await?
    }

    pub async fn watch_create(&self, range: KeyRange, start: Option<Revision>) -> Result<(WatchId, ResponseHeader)> {
        self.call(|reply| Command::WatchCreate { range, start, reply }).await?
    }

    pub async fn watch_poll(&self, id: WatchId) -> Result<(Vec<Event>, WatchState, ResponseHeader)> {
        self.call(|reply| Command::WatchPoll { id, reply }).await?
    }

    /// Fire and forget; also used from drop guards.
    pub fn watch_cancel(&self, id: WatchId) {
        let _ = self.tx.try_send(Command::WatchCancel { id });
    }

    pub async fn info(&self) -> Result<NodeInfo> {
        self.call(|reply| Command::Info { reply }).await
    }

    /// Latest revision applied to the historical index.
    pub fn index_head(&self) -> Revision {
        *self.index_head.borrow()
    }

    /// Resolves when the historical index head moves past `seen`.
    pub async fn index_advanced(&self, seen: Revision) -> Result<Revision> {
        let mut rx = self.index_head.clone();
        let r = rx.wait_for(|&h| h > seen).await.map_err(|_| gone())?;
        Ok(*r)
    }
}

#[derive(Serialize, Deserialize)]
struct ForwardedRequest {
    req: Request,
}

struct PendingForward {
    deadline: Millis,
    reply: Reply<Result<Handled>>,
}

struct PendingSession {
    deadline: Millis,
    req: Request,
    session: TxId,
    reply: Reply<Result<Handled>>,
}

struct Runtime {
    node: Node,
    clock: Arc<dyn Clock>,
    peers: PeerSenders,
    watches: WatchEngine,
    ledger: Option<LedgerFile>,
    hard_path: Option<PathBuf>,
    index_tick: Millis,
    last_index_tick: Millis,
    head_tx: watch::Sender<Revision>,
    next_forward: u64,
    forwards: BTreeMap<u64, PendingForward>,
    sessions: Vec<PendingSession>,
    public_prefixes: Vec<Vec<u8>>,
    admin: Option<NodeKeys>,
    governance_term: Term,
}

fn read_hard_state(path: &Path) -> Result<Option<HardState>> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_hard_state(path: &Path, hard: &HardState) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(hard)?)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Open the ledger file, moving aside whatever an earlier run left behind.
fn open_ledger(dir: &Path, secret: [u8; 32], now: Millis) -> Result<LedgerFile> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("ledger.bin");
    if path.exists() {
        std::fs::rename(&path, dir.join(format!("ledger.{now}.bak")))?;
    }
    LedgerFile::create(&path, secret)
}

/// Start the replica task. Peer envelopes arrive on `inbound`.
pub fn spawn(
    cfg: RuntimeConfig,
    peers: PeerSenders,
    inbound: mpsc::Receiver<Envelope>,
) -> Result<(NodeHandle, JoinHandle<()>)> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::default());
    let now = clock.now();
    let hard_path = cfg.data_dir.as_ref().map(|d| d.join("hard_state.json"));
    let stored = match &hard_path {
        Some(p) => read_hard_state(p)?,
        None => None,
    };
    let ledger = match &cfg.data_dir {
        Some(d) => Some(open_ledger(d, cfg.node.ledger_secret, now)?),
        None => None,
    };
    let node_id = cfg.node.id.clone();
    let node = match stored {
        Some(hard) => {
            tracing::info!(node = %node_id, term = hard.term, "restarting from stored hard state");
            Node::restart(cfg.node, hard, now)
        }
        None => Node::new(cfg.node, now),
    };
    let (head_tx, head_rx) = watch::channel(0);
    let (tx, rx) = mpsc::channel(4096);
    let rt = Runtime {
        node,
        clock,
        peers,
        watches: WatchEngine::default(),
        ledger,
        hard_path,
        index_tick: cfg.index_tick.max(1),
        last_index_tick: now,
        head_tx,
        next_forward: 1,
        forwards: BTreeMap::new(),
        sessions: Vec::new(),
        public_prefixes: cfg.public_prefixes,
        admin: cfg.admin,
        governance_term: 0,
    };
    let task = tokio::spawn(rt.run(rx, inbound));
    Ok((
        NodeHandle {
            tx,
            index_head: head_rx,
            node_id,
        },
        task,
    ))
}

impl Runtime {
    async fn run(mut self, mut cmds: mpsc::Receiver<Command>, mut inbound: mpsc::Receiver<Envelope>) {
        let mut ticker = tokio::time::interval(TICK);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                cmd = cmds.recv() => match cmd {
                    Some(cmd) => self.command(cmd),
                    None => break,
                },
                env = inbound.recv() => match env {
                    Some(env) => self.peer(env),
                    None => break,
                },
                _ = ticker.tick() => self.tick(),
            }
            // Drain whatever else is ready before the next wait.
            for _ in 0..256 {
                match inbound.try_recv() {
                    Ok(env) => self.peer(env),
                    Err(_) => break,
                }
            }
            for _ in 0..256 {
                match cmds.try_recv() {
                    Ok(cmd) => self.command(cmd),
                    Err(_) => break,
                }
            }
            self.after_step();
        }
        if let Some(l) = &mut self.ledger {
            let _ = l.flush();
        }
    }

    fn now(&self) -> Millis {
        self.clock.now()
    }

    fn ship(&mut self, out: Vec<(NodeId, PeerMessage)>) {
        if out.is_empty() {
            return;
        }
        // Votes and terms must be durable before anyone hears about them.
        self.persist_hard_state();
        for (to, message) in out {
            self.peers.send(
                &to,
                Envelope {
                    from: self.node.id().clone(),
                    message,
                },
            );
        }
    }

    fn persist_hard_state(&mut self) {
        if let Some(hard) = self.node.take_hard_state() {
            if let Some(p) = &self.hard_path {
                if let Err(e) = write_hard_state(p, &hard) {
                    tracing::error!(error = %e, "failed to persist hard state");
                }
            }
        }
    }

    fn tick(&mut self) {
        let now = self.now();
        let out = self.node.tick(now);
        self.ship(out);
        self.register_prefixes(now);
        self.expire(now);
        if now - self.last_index_tick >= self.index_tick {
            self.last_index_tick = now;
            match self.node.index_tick() {
                Ok(events) => {
                    if !events.is_empty() {
                        self.watches.publish(&events);
                    }
                    let head = self.node.index().head().revision;
                    self.head_tx.send_if_modified(|h| {
                        let moved = *h != head;
                        *h = head;
                        moved
                    });
                }
                Err(e) => tracing::error!(error = %e, "historical index rejected a committed entry"),
            }
        }
        let committed = self.node.take_committed();
        if let Some(l) = &mut self.ledger {
            if !committed.is_empty() {
                let res = committed.iter().try_for_each(|e| l.append(e)).and_then(|_| l.flush());
                if let Err(e) = res {
                    tracing::error!(error = %e, "failed to write ledger");
                }
            }
        }
    }

    fn after_step(&mut self) {
        self.persist_hard_state();
        if !self.sessions.is_empty() {
            let pending = std::mem::take(&mut self.sessions);
            for s in pending {
                if self.node.revision() >= s.session.revision {
                    self.run_with_session(s.req, s.session, s.reply);
                } else {
                    self.sessions.push(s);
                }
            }
        }
    }

    fn expire(&mut self, now: Millis) {
        let late: Vec<u64> = self
            .forwards
            .iter()
            .filter(|(_, p)| p.deadline <= now)
            .map(|(id, _)| *id)
            .collect();
        for id in late {
            if let Some(p) = self.forwards.remove(&id) {
                let _ = p
                    .reply
                    .send(Err(Error::Unavailable("forwarded request timed out".into())));
            }
        }
        if self.sessions.iter().any(|s| s.deadline <= now) {
            let (late, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.sessions)
                .into_iter()
                .partition(|s| s.deadline <= now);
            self.sessions = keep;
            for s in late {
                let _ = s.reply.send(Err(Error::Unavailable(format!(
                    "this node has not yet caught up with session transaction {}",
                    s.session
                ))));
            }
        }
    }

    fn register_prefixes(&mut self, now: Millis) {
        if !self.node.is_leader() || self.governance_term == self.node.term() || self.node.is_recovering() {
            return;
        }
        let Some(admin) = self.admin.clone() else { return };
        self.governance_term = self.node.term();
        let missing: Vec<Vec<u8>> = self
            .public_prefixes
            .iter()
            .filter(|p| !self.node.kv().public_prefixes().any(|q| q == *p))
            .cloned()
            .collect();
        for p in missing {
            let req = Request::SetPublicPrefix(SetPublicPrefixRequest::signed(p.clone(), &admin));
            if let Err(e) = self.node.handle(&req, now) {
                tracing::warn!(error = %e, prefix = %String::from_utf8_lossy(&p), "could not register public prefix");
            }
        }
    }

    fn command(&mut self, cmd: Command) {
        match cmd {
            Command::Client { req, session, reply } => match session {
                Some(s) if s.revision > 0 && self.node.revision() < s.revision => {
                    self.sessions.push(PendingSession {
                        deadline: self.now() + SESSION_TIMEOUT,
                        req,
                        session: s,
                        reply,
                    });
                }
                Some(s) if s.revision > 0 => self.run_with_session(req, s, reply),
                _ => self.client(req, reply),
            },
            Command::Status { txid, reply } => {
                let _ = reply.send((self.node.tx_status(txid), self.node.read_header()));
            }
            Command::Committed { reply } => {
                let _ = reply.send(self.node.read_header());
            }
            Command::TermHistory { reply } => {
                let _ = reply.send((self.node.term_history(), self.node.read_header()));
            }
            Command::Receipt { txid, reply } => {
                let r = self.node.receipt(txid).map(|r| (r, self.node.read_header()));
                let _ = reply.send(r);
            }
            Command::WatchCreate { range, start, reply } => {
                let r = self
                    .watches
                    .create(range, start, self.node.index())
                    .map(|id| (id, self.node.read_header()));
                let _ = reply.send(r);
            }
            Command::WatchPoll { id, reply } => {
                let r = self
                    .watches
                    .poll(id, self.node.index())
                    .map(|(ev, st)| (ev, st, self.node.read_header()));
                let _ = reply.send(r);
            }
            Command::WatchCancel { id } => self.watches.cancel(id),
            Command::Info { reply } => {
                let n = &self.node;
                let _ = reply.send(NodeInfo {
                    node_id: n.id().clone(),
                    role: n.role(),
                    term: n.term(),
                    leader: n.leader().cloned(),
                    recovering: n.is_recovering(),
                    last_index: n.last_index(),
                    commit_index: n.commit_index(),
                    committed: n.committed(),
                    revision: n.revision(),
                    index_head: n.index().head(),
                    lease_clock: n.lease_clock(),
                    cluster_id: n.cluster_id().to_string(),
                    member_id: n.member_id().to_string(),
                    watches: self.watches.len(),
                });
            }
        }
    }

    fn run_with_session(&mut self, req: Request, session: TxId, reply: Reply<Result<Handled>>) {
        if self.node.log_term_of(session.revision) != Some(session.term) {
            let _ = reply.send(Err(Error::SessionBroken(format!(
                "transaction {session} is no longer in this node's log; reconnect and re-read"
            ))));
            return;
        }
        self.client(req, reply);
    }

    fn client(&mut self, req: Request, reply: Reply<Result<Handled>>) {
        let now = self.now();
        match self.node.handle(&req, now) {
            Err(Error::NotLeader { leader: Some(leader) }) => self.forward(leader, req, reply),
            other => {
                let _ = reply.send(other);
            }
        }
    }

    fn forward(&mut self, leader: NodeId, req: Request, reply: Reply<Result<Handled>>) {
        let id = self.next_forward;
        self.next_forward += 1;
        let request = match serde_json::to_string(&ForwardedRequest { req }) {
            Ok(s) => s,
            Err(e) => {
                let _ = reply.send(Err(e.into()));
                return;
            }
        };
        self.forwards.insert(
            id,
            PendingForward {
                deadline: self.now() + FORWARD_TIMEOUT,
                reply,
            },
        );
        self.peers.send(
            &leader,
            Envelope {
                from: self.node.id().clone(),
                message: PeerMessage::Forward { id, request },
            },
        );
    }

    fn peer(&mut self, env: Envelope) {
        let now = self.now();
        match env.message {
            PeerMessage::Forward { id, request } => {
                let result: Result<Handled> = serde_json::from_str::<ForwardedRequest>(&request)
                    .map_err(Error::from)
                    .and_then(|f| self.node.handle(&f.req, now));
                let result = serde_json::to_string(&result).expect("result serializes");
                self.peers.send(
                    &env.from,
                    Envelope {
                        from: self.node.id().clone(),
                        message: PeerMessage::ForwardReply { id, result },
                    },
                );
            }
            PeerMessage::ForwardReply { id, result } => {
                if let Some(p) = self.forwards.remove(&id) {
                    let parsed = serde_json::from_str::<Result<Handled>>(&result)
                        .unwrap_or_else(|e| Err(Error::Codec(e.to_string())));
                    let _ = p.reply.send(parsed);
                }
            }
            msg => {
                let out = self.node.step(&env.from, msg, now);
                self.ship(out);
            }
        }
    }
}
