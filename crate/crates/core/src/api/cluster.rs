//! Cluster bootstrap: key and config generation, and an in-process cluster
//! of real TCP nodes for tests and benchmarks.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::config::{KeyMaterial, NodeConfig, PeerConfig};
use super::runtime::{NodeHandle, NodeInfo};
use super::{bind_listener, NodeServer};
use crate::crypto::{Certificate, NodeKeys, ServiceKeys};
use crate::error::{Error, Result};
use crate::types::NodeId;

/// One member in a generated layout: name, client address, peer address.
#[derive(Clone, Debug)]
pub struct MemberAddr {
    pub id: String,
    pub http_addr: SocketAddr,
    pub peer_addr: SocketAddr,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Generate service, admin and node keys under `dir` and write one
/// `<id>.toml` config per member. `seed` makes the keys reproducible.
pub fn write_cluster_files(
    dir: &Path,
    members: &[MemberAddr],
    seed: Option<u64>,
    tweak: impl Fn(&mut NodeConfig),
) -> Result<Vec<NodeConfig>> {
    std::fs::create_dir_all(dir)?;
    let dir = dir.canonicalize()?;
    let mut rng = match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_rng(OsRng).map_err(|e| Error::Internal(e.to_string()))?,
    };
    let svc = ServiceKeys::generate(&mut rng, "lskv-service");
    write(&dir.join("service_cert.pem"), &svc.service_cert.to_pem())?;
    write(&dir.join("service_key.pem"), &svc.service_key.to_pem())?;
    write(&dir.join("ledger_secret.hex"), &hex::encode(svc.ledger_secret))?;
    let admin = svc.enroll_node(&mut rng, "admin");
    write(&dir.join("admin_key.pem"), &admin.key.to_pem())?;
    write(&dir.join("admin_cert.pem"), &admin.cert.to_pem())?;

    let mut configs = Vec::new();
    for m in members {
        let keys = svc.enroll_node(&mut rng, &m.id);
        let node_dir = dir.join(&m.id);
        write(&node_dir.join("node_key.pem"), &keys.key.to_pem())?;
        write(&node_dir.join("node_cert.pem"), &keys.cert.to_pem())?;
        let mut cfg = NodeConfig {
            node_id: m.id.clone(),
            http_addr: m.http_addr,
            peer_addr: m.peer_addr,
            peers: members
                .iter()
                .filter(|o| o.id != m.id)
                .map(|o| PeerConfig {
                    id: o.id.clone(),
                    addr: o.peer_addr,
                })
                .collect(),
            data_dir: node_dir.join("data"),
            service_cert: dir.join("service_cert.pem"),
            node_key: node_dir.join("node_key.pem"),
            node_cert: node_dir.join("node_cert.pem"),
            ledger_secret: dir.join("ledger_secret.hex"),
            admin_key: Some(dir.join("admin_key.pem")),
            admin_cert: Some(dir.join("admin_cert.pem")),
            ..NodeConfig::default()
        };
        tweak(&mut cfg);
        let text = toml::to_string_pretty(&cfg).map_err(|e| Error::Internal(e.to_string()))?;
        write(&dir.join(format!("{}.toml", m.id)), &text)?;
        configs.push(cfg);
    }
    Ok(configs)
}

#[derive(Clone, Debug)]
pub struct LocalClusterOptions {
    pub nodes: usize,
    pub signature_interval_ms: i64,
    pub index_tick_ms: i64,
    pub public_prefixes: Vec<String>,
    pub auth_token: Option<String>,
    pub seed: u64,
}

impl Default for LocalClusterOptions {
    fn default() -> Self {
        LocalClusterOptions {
            nodes: 3,
            signature_interval_ms: 1000,
            index_tick_ms: 100,
            public_prefixes: Vec::new(),
            auth_token: None,
            seed: 7,
        }
    }
}

/// Nodes running in this process, each with its own runtime and sockets.
pub struct LocalCluster {
    dir: tempfile::TempDir,
    configs: Vec<NodeConfig>,
    servers: Vec<Option<NodeServer>>,
}

impl LocalCluster {
    pub fn start(opts: LocalClusterOptions) -> Result<Self> {
        let dir = tempfile::tempdir()?;
        let mut listeners = Vec::new();
        let mut members = Vec::new();
        for i in 0..opts.nodes {
            let http = bind_listener("127.0.0.1:0".parse().expect("valid address"))?;
            let peer = bind_listener("127.0.0.1:0".parse().expect("valid address"))?;
            members.push(MemberAddr {
                id: format!("n{i}"),
                http_addr: http.local_addr()?,
                peer_addr: peer.local_addr()?,
            });
            listeners.push((http, peer));
        }
        let configs = write_cluster_files(dir.path(), &members, Some(opts.seed), |c| {
            c.signature_interval_ms = opts.signature_interval_ms;
            c.index_tick_ms = opts.index_tick_ms;
            c.public_prefixes = opts.public_prefixes.clone();
            c.auth_token = opts.auth_token.clone();
        })?;
        let mut servers = Vec::new();
        for (cfg, (http, peer)) in configs.iter().zip(listeners) {
            let keys = KeyMaterial::load(cfg)?;
            servers.push(Some(NodeServer::start_with_listeners(cfg, keys, http, peer)?));
        }
        Ok(LocalCluster { dir, configs, servers })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn dir(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self, i: usize) -> &NodeConfig {
        &self.configs[i]
    }

    pub fn node_id(&self, i: usize) -> NodeId {
        NodeId::new(self.configs[i].node_id.clone())
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.configs.iter().position(|c| c.node_id == id.as_str())
    }

    pub fn url(&self, i: usize) -> String {
        format!("http://{}", self.configs[i].http_addr)
    }

    pub fn urls(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.url(i)).collect()
    }

    pub fn handle(&self, i: usize) -> Option<&NodeHandle> {
        self.servers[i].as_ref().map(|s| s.handle())
    }

    pub fn is_running(&self, i: usize) -> bool {
        self.servers[i].is_some()
    }

    pub fn service_cert(&self) -> Result<Certificate> {
        Certificate::from_pem(&std::fs::read_to_string(&self.configs[0].service_cert)?)
    }

    pub fn ledger_secret(&self) -> Result<[u8; 32]> {
        super::config::read_secret(&self.configs[0].ledger_secret)
    }

    pub fn admin(&self) -> Result<NodeKeys> {
        KeyMaterial::load(&self.configs[0])?
            .admin
            .ok_or_else(|| Error::ConfigError("cluster has no admin key".into()))
    }

    pub fn ledger_path(&self, i: usize) -> PathBuf {
        self.configs[i].data_dir.join("ledger.bin")
    }

    /// Stop node `i`, as if its process died.
    pub fn stop(&mut self, i: usize) {
        if let Some(s) = self.servers[i].take() {
            s.stop();
        }
    }

    /// Start a stopped node again on its old addresses.
    pub fn restart(&mut self, i: usize) -> Result<()> {
        if self.servers[i].is_some() {
            return Ok(());
        }
        let cfg = &self.configs[i];
        let keys = KeyMaterial::load(cfg)?;
        self.servers[i] = Some(NodeServer::start(cfg, keys)?);
        Ok(())
    }

    pub async fn info(&self, i: usize) -> Result<NodeInfo> {
        match self.handle(i) {
            Some(h) => h.info().await,
            None => Err(Error::Unavailable(format!("node {i} is stopped"))),
        }
    }

    /// Wait until a running node leads and every running node agrees on it.
    pub async fn wait_for_leader(&self, timeout: Duration) -> Result<usize> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            if let Some(l) = self.agreed_leader().await {
                return Ok(l);
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(Error::Unavailable("no leader elected in time".into()));
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    async fn agreed_leader(&self) -> Option<usize> {
        let mut leader = None;
        for i in 0..self.len() {
            if !self.is_running(i) {
                continue;
            }
            let info = self.info(i).await.ok()?;
            if info.recovering {
                return None;
            }
            let l = info.leader?;
            match &leader {
                None => leader = Some(l),
                Some(x) if *x == l => {}
                Some(_) => return None,
            }
        }
        let idx = self.index_of(&leader?)?;
        let info = self.info(idx).await.ok()?;
        (info.role == crate::replication::Role::Leader).then_some(idx)
    }

    /// Wait until every running node has committed everything the leader has.
    pub async fn wait_for_convergence(&self, timeout: Duration) -> Result<()> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let l = self.wait_for_leader(timeout).await?;
            let li = self.info(l).await?;
            let mut all = li.commit_index == li.last_index;
            for i in 0..self.len() {
                if self.is_running(i) {
                    let info = self.info(i).await?;
                    all &= info.commit_index == li.commit_index && info.index_head == li.committed;
                }
            }
            if all {
                return Ok(());
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(Error::Unavailable("cluster did not converge in time".into()));
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}
