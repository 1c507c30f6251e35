use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::StoredValue;
use crate::lease::LeaseRecord;
use crate::types::{Digest, LeaseId, Revision};

/// Everything a mutating transaction changes. Followers apply this directly
/// instead of re-executing the request.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxEffects {
    /// Raw stored values; `None` deletes the key.
    pub writes: BTreeMap<Vec<u8>, Option<StoredValue>>,
    /// Lease records; `None` removes the lease.
    pub leases: BTreeMap<LeaseId, Option<LeaseRecord>>,
    pub compaction: Option<Revision>,
    pub public_prefixes: Vec<Vec<u8>>,
}

impl TxEffects {
    pub fn is_empty(&self) -> bool {
        self.writes.is_empty()
            && self.leases.is_empty()
            && self.compaction.is_none()
            && self.public_prefixes.is_empty()
    }

    /// Fold `later` into `self`; later entries replace earlier ones per key.
    pub fn merge(&mut self, later: TxEffects) {
        self.writes.extend(later.writes);
        self.leases.extend(later.leases);
        if later.compaction.is_some() {
            self.compaction = later.compaction;
        }
        for p in later.public_prefixes {
            if !self.public_prefixes.contains(&p) {
                self.public_prefixes.push(p);
            }
        }
    }

    pub fn digest(&self) -> Digest {
        write_set_digest(self)
    }
}

/// SHA-256 over the sorted `(map, key)` pairs a transaction writes, each
/// component prefixed by its u32 little-endian length.
pub fn write_set_digest(fx: &TxEffects) -> Digest {
    let mut pairs: BTreeSet<(&'static str, Vec<u8>)> = BTreeSet::new();
    for k in fx.writes.keys() {
        pairs.insert(("kv", k.clone()));
    }
    for id in fx.leases.keys() {
        pairs.insert(("leases", id.to_le_bytes().to_vec()));
    }
    if fx.compaction.is_some() {
        pairs.insert(("meta", b"compaction".to_vec()));
    }
    for p in &fx.public_prefixes {
        pairs.insert(("public_prefixes", p.clone()));
    }
    let mut buf = Vec::new();
    for (map, key) in &pairs {
        buf.extend_from_slice(&(map.len() as u32).to_le_bytes());
        buf.extend_from_slice(map.as_bytes());
        buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
        buf.extend_from_slice(key);
    }
    Digest::of(&buf)
}
