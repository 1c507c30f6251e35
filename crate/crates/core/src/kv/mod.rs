//! Versioned key-value state machine.
//!
//! The state is a persistent ordered map, so snapshots are cheap clones. Every
//! stored value remembers the revision of the transaction that last wrote it,
//! and revision fields are resolved lazily from that when a value is read.

mod effects;
mod state;

pub use effects::{write_set_digest, TxEffects};
pub use state::{ExecContext, Executed, HistoricalRead, KvState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{b64, LeaseId, Revision, TxId};

/// A value as stored in the map.
///
/// `create_revision` is 0 until the first update after creation resolves it,
/// and `mod_revision` lags one write behind. Use [`resolve_revisions`] with the
/// entry's last-write transaction to obtain the values clients see.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredValue {
    #[serde(with = "b64")]
    pub data: Vec<u8>,
    pub create_revision: Revision,
    pub mod_revision: Revision,
    pub version: i64,
    pub lease: LeaseId,
}

/// Fill in the revision fields of a raw stored value written by `last_write`.
pub fn resolve_revisions(raw: &StoredValue, last_write: TxId) -> StoredValue {
    StoredValue {
        create_revision: if raw.create_revision == 0 {
            last_write.revision
        } else {
            raw.create_revision
        },
        mod_revision: last_write.revision,
        ..raw.clone()
    }
}

/// Key interval with etcd conventions: no end selects one key, an end of
/// `[0x00]` selects every key from `start`, anything else is `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KeyRange {
    Single(Vec<u8>),
    From(Vec<u8>),
    Between(Vec<u8>, Vec<u8>),
}

impl KeyRange {
    pub fn new(start: &[u8], end: Option<&[u8]>) -> Result<Self> {
        match end {
            None | Some([]) => {
                if start.is_empty() {
                    Err(Error::InvalidArgument("key must not be empty".into()))
                } else {
                    Ok(KeyRange::Single(start.to_vec()))
                }
            }
            Some([0]) => Ok(KeyRange::From(start.to_vec())),
            Some(end) if start < end => Ok(KeyRange::Between(start.to_vec(), end.to_vec())),
            Some(_) => Err(Error::InvalidArgument("range end must sort after the key".into())),
        }
    }

    /// Range covering every key that starts with `prefix`.
    pub fn prefix(prefix: &[u8]) -> Self {
        match prefix_end(prefix) {
            Some(end) => KeyRange::Between(prefix.to_vec(), end),
            None => KeyRange::From(prefix.to_vec()),
        }
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        match self {
            KeyRange::Single(k) => k.as_slice() == key,
            KeyRange::From(s) => key >= s.as_slice(),
            KeyRange::Between(s, e) => key >= s.as_slice() && key < e.as_slice(),
        }
    }

    pub fn start(&self) -> &[u8] {
        match self {
            KeyRange::Single(k) | KeyRange::From(k) | KeyRange::Between(k, _) => k,
        }
    }

    /// Exclusive upper bound, if any. A single key has the bound `key ++ [0]`.
    pub fn end_exclusive(&self) -> Option<Vec<u8>> {
        match self {
            KeyRange::Single(k) => {
                let mut e = k.clone();
                e.push(0);
                Some(e)
            }
            KeyRange::From(_) => None,
            KeyRange::Between(_, e) => Some(e.clone()),
        }
    }

    pub fn bounds(&self) -> (std::ops::Bound<Vec<u8>>, std::ops::Bound<Vec<u8>>) {
        use std::ops::Bound;
        let lo = Bound::Included(self.start().to_vec());
        let hi = match self.end_exclusive() {
            Some(e) => Bound::Excluded(e),
            None => Bound::Unbounded,
        };
        (lo, hi)
    }
}

/// Smallest key greater than every key with the given prefix, if one exists.
pub fn prefix_end(prefix: &[u8]) -> Option<Vec<u8>> {
    let mut end = prefix.to_vec();
    while let Some(last) = end.pop() {
        if last < 0xff {
            end.push(last + 1);
            return Some(end);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_fills_create_on_first_read() {
        let raw = StoredValue {
            data: b"v".to_vec(),
            version: 1,
            ..Default::default()
        };
        let v = resolve_revisions(&raw, TxId::new(1, 4));
        assert_eq!((v.create_revision, v.mod_revision, v.version), (4, 4, 1));

        let raw = StoredValue {
            data: b"w".to_vec(),
            create_revision: 4,
            mod_revision: 4,
            version: 2,
            lease: 0,
        };
        let v = resolve_revisions(&raw, TxId::new(1, 9));
        assert_eq!((v.create_revision, v.mod_revision, v.version), (4, 9, 2));
    }

    #[test]
    fn key_range_conventions() {
        assert_eq!(KeyRange::new(b"a", None).unwrap(), KeyRange::Single(b"a".to_vec()));
        assert!(KeyRange::new(b"", None).is_err());
        assert!(KeyRange::new(b"b", Some(b"a")).is_err());
        assert!(KeyRange::new(b"a", Some(b"a")).is_err());
        let all = KeyRange::new(b"", Some(&[0])).unwrap();
        assert!(all.contains(b"") && all.contains(b"\xff\xff"));
        let r = KeyRange::new(b"a", Some(b"c")).unwrap();
        assert!(r.contains(b"a") && r.contains(b"bzz") && !r.contains(b"c"));
    }

    #[test]
    fn prefix_ranges() {
        assert_eq!(prefix_end(b"ab"), Some(b"ac".to_vec()));
        assert_eq!(prefix_end(b"a\xff"), Some(b"b".to_vec()));
        assert_eq!(prefix_end(b"\xff\xff"), None);
        let p = KeyRange::prefix(b"k/");
        assert!(p.contains(b"k/") && p.contains(b"k/zz") && !p.contains(b"k0"));
    }
}
