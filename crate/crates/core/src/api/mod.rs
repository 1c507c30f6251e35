//! Network-facing node: configuration, the replica task, peer transport and
//! the JSON gateway.

pub mod cluster;
pub mod config;
pub mod http;
pub mod runtime;
pub mod transport;

use std::net::SocketAddr;
use std::time::{Duration, Instant};

use tokio::sync::mpsc;

pub use cluster::{write_cluster_files, LocalCluster, LocalClusterOptions, MemberAddr};
pub use config::{KeyMaterial, NodeConfig, PeerConfig};
pub use http::SESSION_HEADER;
pub use runtime::{NodeHandle, NodeInfo, RuntimeConfig};

use crate::error::{Error, Result};
use crate::replication::NodeOptions;
use crate::types::NodeId;

/// Bind a listener with address reuse, retrying briefly in case a previous
/// owner is still closing.
pub fn bind_listener(addr: SocketAddr) -> Result<std::net::TcpListener> {
    use socket2::{Domain, Socket, Type};
    let deadline = Instant::now() + Duration::from_secs(3);
    loop {
        let attempt = (|| {
            let s = Socket::new(Domain::for_address(addr), Type::STREAM, None)?;
            s.set_reuse_address(true)?;
            s.bind(&addr.into())?;
            s.listen(1024)?;
            Ok::<_, std::io::Error>(std::net::TcpListener::from(s))
        })();
        match attempt {
            Ok(l) => return Ok(l),
            Err(e) if Instant::now() < deadline && e.kind() == std::io::ErrorKind::AddrInUse => {
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(Error::Io(format!("bind {addr}: {e}"))),
        }
    }
}

fn node_options(cfg: &NodeConfig, keys: &KeyMaterial) -> NodeOptions {
    let mut o = NodeOptions::new(
        NodeId::new(cfg.node_id.clone()),
        cfg.peer_ids(),
        keys.node.clone(),
        keys.service_cert.clone(),
        keys.ledger_secret,
    );
    o.signature_interval = cfg.signature_interval_ms;
    o.heartbeat_interval = cfg.heartbeat_ms;
    o.election_timeout = cfg.election_timeout_ms;
    o.batch_max = cfg.batch_max;
    o.batch_delay = cfg.batch_delay_ms;
    o.seed = if cfg.seed == 0 { rand::random() } else { cfg.seed };
    o
}

/// A running node with its own async runtime.
pub struct NodeServer {
    rt: Option<tokio::runtime::Runtime>,
    handle: NodeHandle,
    http_addr: SocketAddr,
    peer_addr: SocketAddr,
}

impl NodeServer {
    pub fn start(cfg: &NodeConfig, keys: KeyMaterial) -> Result<Self> {
        let http = bind_listener(cfg.http_addr)?;
        let peer = bind_listener(cfg.peer_addr)?;
        Self::start_with_listeners(cfg, keys, http, peer)
    }

    /// Start on listeners the caller already bound.
    pub fn start_with_listeners(
        cfg: &NodeConfig,
        keys: KeyMaterial,
        http: std::net::TcpListener,
        peer: std::net::TcpListener,
    ) -> Result<Self> {
        cfg.validate()?;
        let http_addr = http.local_addr()?;
        let peer_addr = peer.local_addr()?;
        http.set_nonblocking(true)?;
        peer.set_nonblocking(true)?;
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(cfg.worker_threads)
            .thread_name(format!("lskv-{}", cfg.node_id))
            .enable_all()
            .build()?;
        let rcfg = RuntimeConfig {
            node: node_options(cfg, &keys),
            data_dir: Some(cfg.data_dir.clone()),
            index_tick: cfg.index_tick_ms,
            public_prefixes: cfg.public_prefixes.iter().map(|p| p.as_bytes().to_vec()).collect(),
            admin: keys.admin.clone(),
        };
        let peers: Vec<(NodeId, SocketAddr)> = cfg.peers.iter().map(|p| (NodeId::new(p.id.clone()), p.addr)).collect();
        let auth_token = cfg.auth_token.clone();
        let handle = {
            let _entered = rt.enter();
            let (senders, _) = transport::connect_peers(&peers);
            let (in_tx, in_rx) = mpsc::channel(8192);
            transport::serve_peers(tokio::net::TcpListener::from_std(peer)?, in_tx);
            let (handle, _) = runtime::spawn(rcfg, senders, in_rx)?;
            let app = http::router(http::AppState {
                node: handle.clone(),
                auth_token,
            });
            let listener = tokio::net::TcpListener::from_std(http)?;
            tokio::spawn(async move {
                if let Err(e) = axum::serve(listener, app).await {
                    tracing::error!(error = %e, "http server stopped");
                }
            });
            handle
        };
        tracing::info!(node = %cfg.node_id, %http_addr, %peer_addr, "node started");
        Ok(NodeServer {
            rt: Some(rt),
            handle,
            http_addr,
            peer_addr,
        })
    }

    pub fn handle(&self) -> &NodeHandle {
        &self.handle
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    pub fn peer_addr(&self) -> SocketAddr {
        self.peer_addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    /// Block the calling thread until Ctrl-C.
    pub fn run_until_interrupted(mut self) {
        if let Some(rt) = self.rt.take() {
            let _ = rt.block_on(tokio::signal::ctrl_c());
            rt.shutdown_timeout(Duration::from_secs(2));
        }
    }

    /// Stop every task of this node and close its sockets.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(rt) = self.rt.take() {
            rt.shutdown_background();
        }
    }
}

impl Drop for NodeServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
