//! Lease table: grant, refresh, revoke and expiry against the node clock.
//!
//! Expiry is evaluated against the clock reading carried in each request's
//! execution context, so execution stays a pure function of state and input.
//! Keys attached to an expired lease stay in storage ("soft deleted") until
//! a compaction reaps them.

use std::sync::atomic::{AtomicI64, Ordering};

use im::{OrdMap, OrdSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LeaseId, Millis, Term};

/// Replicated part of a lease.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseRecord {
    pub id: LeaseId,
    /// Granted time-to-live in seconds.
    pub ttl: i64,
    /// Clock reading at which the lease stops being live.
    pub expiry: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lease {
    pub record: LeaseRecord,
    pub keys: OrdSet<Vec<u8>>,
}

impl Lease {
    pub fn is_live(&self, now: Millis) -> bool {
        now < self.record.expiry
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LeaseTable {
    leases: OrdMap<LeaseId, Lease>,
    /// Highest server-assigned sequence number seen per term.
    seq: (Term, i64),
}

impl LeaseTable {
    pub fn get(&self, id: LeaseId) -> Option<&Lease> {
        self.leases.get(&id)
    }

    pub fn len(&self) -> usize {
        self.leases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Lease> {
        self.leases.values()
    }

    /// True when the lease exists and has not expired at `now`.
    pub fn is_live(&self, id: LeaseId, now: Millis) -> bool {
        self.leases.get(&id).is_some_and(|l| l.is_live(now))
    }

    /// Whether a key held by `id` is hidden from readers at `now`.
    pub fn hides(&self, id: LeaseId, now: Millis) -> bool {
        id != 0 && !self.is_live(id, now)
    }

    /// Record for a new lease. `requested_id = 0` asks the server to pick one.
    pub fn grant(&self, ttl: i64, requested_id: LeaseId, now: Millis, term: Term) -> Result<LeaseRecord> {
        if ttl <= 0 {
            return Err(Error::InvalidArgument(format!("lease TTL must be positive, got {ttl}")));
        }
        if requested_id < 0 {
            return Err(Error::InvalidArgument(format!("lease ID must not be negative, got {requested_id}")));
        }
        let id = if requested_id == 0 {
            self.next_id(term)
        } else if self.leases.contains_key(&requested_id) {
            return Err(Error::LeaseExists(requested_id));
        } else {
            requested_id
        };
        Ok(LeaseRecord {
            id,
            ttl,
            expiry: now.saturating_add(ttl.saturating_mul(1000)),
        })
    }

    /// Server-assigned IDs embed the term in the high 32 bits so two leaders never collide.
    fn next_id(&self, term: Term) -> LeaseId {
        let mut k = if self.seq.0 == term { self.seq.1 } else { 0 };
        loop {
            k += 1;
            let id = ((term & 0x7fff_ffff) << 32) | (k & 0xffff_ffff);
            if !self.leases.contains_key(&id) {
                return id;
            }
        }
    }

    /// Refreshed record; expired or unknown leases cannot be revived.
    pub fn keep_alive(&self, id: LeaseId, now: Millis) -> Result<LeaseRecord> {
        match self.leases.get(&id) {
            Some(l) if l.is_live(now) => Ok(LeaseRecord {
                expiry: now.saturating_add(l.record.ttl.saturating_mul(1000)),
                ..l.record
            }),
            _ => Err(Error::LeaseNotFound(id)),
        }
    }

    /// Keys that a revoke of `id` would delete.
    pub fn revoke(&self, id: LeaseId) -> Result<Vec<Vec<u8>>> {
        self.leases
            .get(&id)
            .map(|l| l.keys.iter().cloned().collect())
            .ok_or(Error::LeaseNotFound(id))
    }

    /// Leases whose expiry has passed at `now`, in ID order.
    pub fn expired(&self, now: Millis) -> Vec<LeaseId> {
        self.leases
            .values()
            .filter(|l| !l.is_live(now))
            .map(|l| l.record.id)
            .collect()
    }

    pub fn upsert(&mut self, rec: LeaseRecord) {
        let (t, k) = (rec.id >> 32, rec.id & 0xffff_ffff);
        if t > self.seq.0 {
            self.seq = (t, k);
        } else if t == self.seq.0 && k > self.seq.1 {
            self.seq.1 = k;
        }
        match self.leases.get_mut(&rec.id) {
            Some(l) => l.record = rec,
            None => {
                self.leases.insert(
                    rec.id,
                    Lease {
                        record: rec,
                        keys: OrdSet::new(),
                    },
                );
            }
        }
    }

    pub fn remove(&mut self, id: LeaseId) {
        self.leases.remove(&id);
    }

    pub fn attach(&mut self, id: LeaseId, key: &[u8]) {
        if let Some(l) = self.leases.get_mut(&id) {
            l.keys.insert(key.to_vec());
        }
    }

    pub fn detach(&mut self, id: LeaseId, key: &[u8]) {
        if let Some(l) = self.leases.get_mut(&id) {
            l.keys.remove(key);
        }
    }
}

/// Source of node time in milliseconds. Readings never go backwards.
pub trait Clock: Send + Sync {
    fn now(&self) -> Millis;
}

/// Wall clock clamped to be monotone within the process lifetime.
#[derive(Debug, Default)]
pub struct SystemClock {
    last: AtomicI64,
}

impl Clock for SystemClock {
    fn now(&self) -> Millis {
        let wall = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        let prev = self.last.fetch_max(wall, Ordering::SeqCst);
        prev.max(wall)
    }
}

/// Clock driven by tests. `advance` and `set` refuse to move backwards.
#[derive(Debug, Default)]
pub struct ScriptedClock {
    now: AtomicI64,
}

impl ScriptedClock {
    pub fn new(start: Millis) -> Self {
        ScriptedClock {
            now: AtomicI64::new(start),
        }
    }

    pub fn advance(&self, by: Millis) -> Millis {
        self.now.fetch_add(by.max(0), Ordering::SeqCst) + by.max(0)
    }

    pub fn set(&self, t: Millis) {
        self.now.fetch_max(t, Ordering::SeqCst);
    }
}

impl Clock for ScriptedClock {
    fn now(&self) -> Millis {
        self.now.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grant_assigns_positive_ids_and_expiry() {
        let t = LeaseTable::default();
        let rec = t.grant(5, 0, 1_000, 1).unwrap();
        assert!(rec.id > 0);
        assert_eq!(rec.id >> 32, 1);
        assert_eq!(rec.expiry, 6_000);
    }

    #[test]
    fn requested_id_collision() {
        let mut t = LeaseTable::default();
        let rec = t.grant(5, 7, 0, 1).unwrap();
        t.upsert(rec);
        assert_eq!(t.grant(5, 7, 0, 1), Err(Error::LeaseExists(7)));
        assert!(matches!(t.grant(0, 0, 0, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn server_ids_skip_taken_and_restart_per_term() {
        let mut t = LeaseTable::default();
        let a = t.grant(1, 0, 0, 2).unwrap();
        t.upsert(a);
        let b = t.grant(1, 0, 0, 2).unwrap();
        assert_eq!(b.id, a.id + 1);
        // a client explicitly took the next slot
        t.upsert(LeaseRecord { id: b.id, ttl: 1, expiry: 10 });
        let c = t.grant(1, 0, 0, 2).unwrap();
        assert_eq!(c.id, b.id + 1);
        let d = t.grant(1, 0, 0, 3).unwrap();
        assert_eq!(d.id, (3 << 32) | 1);
    }

    #[test]
    fn keep_alive_extends_by_full_ttl_and_refuses_expired() {
        let mut t = LeaseTable::default();
        let rec = t.grant(5, 9, 0, 1).unwrap();
        t.upsert(rec);
        let refreshed = t.keep_alive(9, 4_000).unwrap();
        assert_eq!(refreshed.expiry, 9_000);
        assert_eq!(t.keep_alive(9, 5_000), Err(Error::LeaseNotFound(9)));
        assert_eq!(t.keep_alive(10, 0), Err(Error::LeaseNotFound(10)));
    }

    #[test]
    fn expired_lists_only_past_expiry() {
        let mut t = LeaseTable::default();
        t.upsert(LeaseRecord { id: 1, ttl: 1, expiry: 1_000 });
        t.upsert(LeaseRecord { id: 2, ttl: 2, expiry: 2_000 });
        assert_eq!(t.expired(999), Vec::<LeaseId>::new());
        assert_eq!(t.expired(1_000), vec![1]);
        assert!(t.hides(1, 1_000));
        assert!(!t.hides(2, 1_000));
        assert!(!t.hides(0, 1_000));
    }

    #[test]
    fn scripted_clock_is_monotone() {
        let c = ScriptedClock::new(10);
        c.set(5);
        assert_eq!(c.now(), 10);
        c.advance(-3);
        assert_eq!(c.now(), 10);
        assert_eq!(c.advance(5), 15);
    }
}
