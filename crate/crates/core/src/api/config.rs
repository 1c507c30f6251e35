//! Node configuration and key material on disk.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crypto::{Certificate, KeyPair, NodeKeys};
use crate::error::{Error, Result};
use crate::types::{hex_decode, Millis, NodeId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerConfig {
    pub id: String,
    /// Peer protocol address.
    pub addr: SocketAddr,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub node_id: String,
    pub http_addr: SocketAddr,
    pub peer_addr: SocketAddr,
    pub peers: Vec<PeerConfig>,
    pub signature_interval_ms: Millis,
    pub worker_threads: usize,
    pub batch_max: usize,
    pub batch_delay_ms: Millis,
    pub heartbeat_ms: Millis,
    pub election_timeout_ms: (Millis, Millis),
    pub index_tick_ms: Millis,
    pub data_dir: PathBuf,
    pub service_cert: PathBuf,
    pub node_key: PathBuf,
    pub node_cert: PathBuf,
    pub ledger_secret: PathBuf,
    /// Prefixes registered by the first leader, signed with the admin key below.
    pub public_prefixes: Vec<String>,
    pub admin_key: Option<PathBuf>,
    pub admin_cert: Option<PathBuf>,
    /// When set, client requests must carry `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
    pub seed: u64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            node_id: "n0".into(),
            http_addr: "127.0.0.1:2379".parse().expect("valid address"),
            peer_addr: "127.0.0.1:2380".parse().expect("valid address"),
            peers: Vec::new(),
            signature_interval_ms: 1000,
            worker_threads: 2,
            batch_max: 128,
            batch_delay_ms: 5,
            heartbeat_ms: 50,
            election_timeout_ms: (150, 300),
            index_tick_ms: 100,
            data_dir: PathBuf::from("data"),
            service_cert: PathBuf::from("service_cert.pem"),
            node_key: PathBuf::from("node_key.pem"),
            node_cert: PathBuf::from("node_cert.pem"),
            ledger_secret: PathBuf::from("ledger_secret.hex"),
            public_prefixes: Vec::new(),
            admin_key: None,
            admin_cert: None,
            auth_token: None,
            seed: 0,
        }
    }
}

impl NodeConfig {
    /// Load a `.toml` or `.json` file. Relative key paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg: NodeConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::ConfigError(e.to_string()))?,
            _ => toml::from_str(&text).map_err(|e| Error::ConfigError(e.to_string()))?,
        };
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.service_cert);
        fix(&mut self.node_key);
        fix(&mut self.node_cert);
        fix(&mut self.ledger_secret);
        if let Some(p) = &mut self.admin_key {
            fix(p);
        }
        if let Some(p) = &mut self.admin_cert {
            fix(p);
        }
    }

    /// Apply `LSKV_HTTP_ADDR`, `LSKV_PEER_ADDR` and `LSKV_DATA_DIR`.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        let addr = |k: &str, v: String| {
            v.parse::<SocketAddr>()
                .map_err(|e| Error::ConfigError(format!("{k}={v}: {e}")))
        };
        if let Some(v) = get("LSKV_HTTP_ADDR") {
            self.http_addr = addr("LSKV_HTTP_ADDR", v)?;
        }
        if let Some(v) = get("LSKV_PEER_ADDR") {
            self.peer_addr = addr("LSKV_PEER_ADDR", v)?;
        }
        if let Some(v) = get("LSKV_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigError(m.into()));
        if self.node_id.is_empty() {
            return bad("node_id must not be empty");
        }
        if self.signature_interval_ms <= 0 {
            return bad("signature_interval_ms must be positive");
        }
        if self.worker_threads == 0 || self.batch_max == 0 {
            return bad("worker_threads and batch_max must be positive");
        }
        if self.batch_delay_ms < 0 || self.index_tick_ms <= 0 || self.heartbeat_ms <= 0 {
            return bad("batch, index tick and heartbeat intervals must be positive");
        }
        let (lo, hi) = self.election_timeout_ms;
        if lo > hi || lo <= self.heartbeat_ms {
            return bad("election timeout must be an ordered range above the heartbeat interval");
        }
        if self.peers.iter().any(|p| p.id == self.node_id) {
            return bad("peers must not include this node");
        }
        if !self.public_prefixes.is_empty() && (self.admin_key.is_none() || self.admin_cert.is_none()) {
            return bad("public_prefixes need admin_key and admin_cert to sign the registration");
        }
        Ok(())
    }

    pub fn peer_ids(&self) -> Vec<NodeId> {
        self.peers.iter().map(|p| NodeId::new(p.id.clone())).collect()
    }
}

/// Everything a node needs from disk besides its configuration.
#[derive(Clone, Debug)]
pub struct KeyMaterial {
    pub service_cert: Certificate,
    pub node: NodeKeys,
    pub ledger_secret: [u8; 32],
    pub admin: Option<NodeKeys>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))
}

pub fn read_secret(path: &Path) -> Result<[u8; 32]> {
    let raw = hex_decode(read(path)?.trim()).map_err(Error::ConfigError)?;
    raw.try_into()
        .map_err(|_| Error::ConfigError(format!("{}: ledger secret must be 32 bytes", path.display())))
}

impl KeyMaterial {
    pub fn load(cfg: &NodeConfig) -> Result<Self> {
        let admin = match (&cfg.admin_key, &cfg.admin_cert) {
            (Some(k), Some(c)) => Some(NodeKeys {
                key: KeyPair::from_pem(&read(k)?)?,
                cert: Certificate::from_pem(&read(c)?)?,
            }),
            _ => None,
        };
        let km = KeyMaterial {
            service_cert: Certificate::from_pem(&read(&cfg.service_cert)?)?,
            node: NodeKeys {
                key: KeyPair::from_pem(&read(&cfg.node_key)?)?,
                cert: Certificate::from_pem(&read(&cfg.node_cert)?)?,
            },
            ledger_secret: read_secret(&cfg.ledger_secret)?,
            admin,
        };
        if km.node.key.public_key() != km.node.cert.public_key {
            return Err(Error::ConfigError("node key does not match node certificate".into()));
        }
        if !km.node.cert.is_endorsed_by(&km.service_cert) {
            return Err(Error::ConfigError("node certificate is not endorsed by the service".into()));
        }
        if km.node.cert.subject != cfg.node_id {
            return Err(Error::ConfigError(format!(
                "node certificate is for {:?}, config says {:?}",
                km.node.cert.subject, cfg.node_id
            )));
        }
        Ok(km)
    }
}
