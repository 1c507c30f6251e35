//! Ledger file format.
//!
//! A ledger is a sequence of records `[len: u32 LE][type: u8][body]` where
//! `len` counts the type byte and the body. Type 0 is a transaction, 1 a
//! signature entry and 2 a governance transaction.
//!
//! Transaction bodies are `term: i64 LE, revision: i64 LE, leaf: 32 bytes,
//! public_len: u32 LE, public section, ciphertext`. The public section holds
//! writes to keys under a registered public prefix, prefix registrations and
//! the governance request. Everything else is sealed with ChaCha20-Poly1305
//! under a key derived from the ledger secret, with every preceding byte of
//! the record as associated data.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use bincode::Options;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::entry::{GovernanceRecord, LedgerEntry, SignatureEntry, TxEntry};
use crate::error::{Error, Result};
use crate::kv::{StoredValue, TxEffects};
use crate::lease::LeaseRecord;
use crate::types::{Digest, LeaseId, Revision, TxId};

pub const RECORD_TX: u8 = 0;
pub const RECORD_SIGNATURE: u8 = 1;
pub const RECORD_GOVERNANCE: u8 = 2;

const MAX_RECORD: usize = 64 << 20;

pub(crate) fn bin() -> impl Options {
    bincode::DefaultOptions::new()
        .with_fixint_encoding()
        .with_little_endian()
        .with_limit(MAX_RECORD as u64)
        .reject_trailing_bytes()
}

pub(crate) fn to_bin<T: Serialize>(v: &T) -> Vec<u8> {
    bin().serialize(v).expect("in-memory serialization")
}

pub(crate) fn from_bin<T: DeserializeOwned>(b: &[u8]) -> Result<T> {
    bin().deserialize(b).map_err(|e| Error::Codec(e.to_string()))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicSection {
    pub writes: Vec<(Vec<u8>, Option<StoredValue>)>,
    pub public_prefixes: Vec<Vec<u8>>,
    pub governance: Option<GovernanceRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct PrivateSection {
    writes: Vec<(Vec<u8>, Option<StoredValue>)>,
    leases: Vec<(LeaseId, Option<LeaseRecord>)>,
    compaction: Option<Revision>,
    claims_digest: Digest,
    commit_evidence: String,
}

fn cipher(secret: &[u8; 32]) -> ChaCha20Poly1305 {
    let k = Digest::of_parts(&[b"lskv-ledger-key\0", secret]);
    ChaCha20Poly1305::new(Key::from_slice(k.as_bytes()))
}

fn nonce(txid: TxId) -> [u8; 12] {
    let d = Digest::of_parts(&[&txid.term.to_le_bytes(), &txid.revision.to_le_bytes()]);
    d.0[..12].try_into().expect("12 bytes")
}

fn is_public(prefixes: &BTreeSet<Vec<u8>>, key: &[u8]) -> bool {
    prefixes.iter().any(|p| key.starts_with(p))
}

/// Stateful encoder; tracks registered public prefixes so that a prefix
/// applies only to records written after its registration.
#[derive(Clone, Debug)]
pub struct LedgerEncoder {
    secret: [u8; 32],
    prefixes: BTreeSet<Vec<u8>>,
}

impl LedgerEncoder {
    pub fn new(secret: [u8; 32]) -> Self {
        LedgerEncoder {
            secret,
            prefixes: BTreeSet::new(),
        }
    }

    pub fn encode(&mut self, entry: &LedgerEntry) -> Vec<u8> {
        match entry {
            LedgerEntry::Tx(tx) => self.encode_tx(tx),
            LedgerEntry::Signature(sig) => frame(RECORD_SIGNATURE, &to_bin(sig)),
        }
    }

    fn encode_tx(&mut self, tx: &TxEntry) -> Vec<u8> {
        let comps = tx.components(&self.secret);
        let mut public = PublicSection {
            public_prefixes: tx.effects.public_prefixes.clone(),
            governance: tx.governance.clone(),
            ..Default::default()
        };
        let mut private = PrivateSection {
            leases: tx.effects.leases.iter().map(|(k, v)| (*k, *v)).collect(),
            compaction: tx.effects.compaction,
            claims_digest: tx.claims_digest,
            commit_evidence: comps.commit_evidence.clone(),
            ..Default::default()
        };
        for (k, v) in &tx.effects.writes {
            if is_public(&self.prefixes, k) {
                public.writes.push((k.clone(), v.clone()));
            } else {
                private.writes.push((k.clone(), v.clone()));
            }
        }
        let kind = if tx.governance.is_some() {
            RECORD_GOVERNANCE
        } else {
            RECORD_TX
        };
        let public_bytes = to_bin(&public);
        let private_bytes = to_bin(&private);
        let header_len = 4 + 1 + 16 + 32 + 4 + public_bytes.len();
        let total = header_len + private_bytes.len() + 16;
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(&((total - 4) as u32).to_le_bytes());
        out.push(kind);
        out.extend_from_slice(&tx.txid.term.to_le_bytes());
        out.extend_from_slice(&tx.txid.revision.to_le_bytes());
        out.extend_from_slice(comps.leaf().as_bytes());
        out.extend_from_slice(&(public_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&public_bytes);
        let sealed = cipher(&self.secret)
            .encrypt(
                Nonce::from_slice(&nonce(tx.txid)),
                Payload {
                    msg: &private_bytes,
                    aad: &out,
                },
            )
            .expect("encryption of in-memory buffer");
        out.extend_from_slice(&sealed);
        debug_assert_eq!(out.len(), total);
        self.prefixes.extend(tx.effects.public_prefixes.iter().cloned());
        out
    }
}

fn frame(kind: u8, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + body.len());
    out.extend_from_slice(&((body.len() + 1) as u32).to_le_bytes());
    out.push(kind);
    out.extend_from_slice(body);
    out
}

/// A framed record located in a ledger byte stream.
#[derive(Clone, Copy, Debug)]
pub struct RawRecord<'a> {
    pub offset: usize,
    pub kind: u8,
    /// The whole record including its length prefix.
    pub bytes: &'a [u8],
}

impl RawRecord<'_> {
    pub fn body(&self) -> &[u8] {
        &self.bytes[5..]
    }
}

/// Split a ledger into records. Fails on a record that runs past the end.
pub fn split_records(data: &[u8]) -> std::result::Result<Vec<RawRecord<'_>>, (usize, String)> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < data.len() {
        if data.len() - off < 5 {
            return Err((off, "truncated record header".into()));
        }
        let len = u32::from_le_bytes(data[off..off + 4].try_into().expect("4 bytes")) as usize;
        if len == 0 || len > MAX_RECORD {
            return Err((off, format!("invalid record length {len}")));
        }
        let end = off + 4 + len;
        if end > data.len() {
            return Err((off, "record runs past end of ledger".into()));
        }
        out.push(RawRecord {
            offset: off,
            kind: data[off + 4],
            bytes: &data[off..end],
        });
        off = end;
    }
    Ok(out)
}

/// Plaintext parts of a transaction record.
#[derive(Clone, Debug)]
pub struct TxHeader {
    pub txid: TxId,
    pub leaf: Digest,
    pub public: PublicSection,
    /// Offset of the ciphertext within the record bytes.
    sealed_at: usize,
}

pub fn parse_tx_header(rec: &RawRecord<'_>) -> Result<TxHeader> {
    let b = rec.bytes;
    if b.len() < 5 + 16 + 32 + 4 {
        return Err(Error::Codec("transaction record too short".into()));
    }
    let term = i64::from_le_bytes(b[5..13].try_into().expect("8 bytes"));
    let revision = i64::from_le_bytes(b[13..21].try_into().expect("8 bytes"));
    let leaf = Digest(b[21..53].try_into().expect("32 bytes"));
    let plen = u32::from_le_bytes(b[53..57].try_into().expect("4 bytes")) as usize;
    let sealed_at = 57usize
        .checked_add(plen)
        .filter(|e| *e + 16 <= b.len())
        .ok_or_else(|| Error::Codec("public section runs past record".into()))?;
    let public: PublicSection = from_bin(&b[57..sealed_at])?;
    Ok(TxHeader {
        txid: TxId::new(term, revision),
        leaf,
        public,
        sealed_at,
    })
}

/// Decrypt a transaction record and rebuild its log entry.
pub fn open_tx(rec: &RawRecord<'_>, header: &TxHeader, secret: &[u8; 32]) -> Result<(TxEntry, String)> {
    let plain = cipher(secret)
        .decrypt(
            Nonce::from_slice(&nonce(header.txid)),
            Payload {
                msg: &rec.bytes[header.sealed_at..],
                aad: &rec.bytes[..header.sealed_at],
            },
        )
        .map_err(|_| Error::Codec("authenticated decryption failed".into()))?;
    let private: PrivateSection = from_bin(&plain)?;
    let mut effects = TxEffects::default();
    for (k, v) in header.public.writes.iter().chain(private.writes.iter()) {
        if effects.writes.insert(k.clone(), v.clone()).is_some() {
            return Err(Error::Codec("key written twice in one record".into()));
        }
    }
    effects.leases = private.leases.into_iter().collect();
    effects.compaction = private.compaction;
    effects.public_prefixes = header.public.public_prefixes.clone();
    Ok((
        TxEntry {
            txid: header.txid,
            effects,
            claims_digest: private.claims_digest,
            governance: header.public.governance.clone(),
        },
        private.commit_evidence,
    ))
}

pub fn parse_signature(rec: &RawRecord<'_>) -> Result<SignatureEntry> {
    from_bin(rec.body())
}

/// Decrypt every transaction record of a ledger in file order.
pub fn read_transactions(data: &[u8], secret: &[u8; 32]) -> Result<Vec<TxEntry>> {
    let records = split_records(data).map_err(|(off, reason)| Error::Codec(format!("offset {off}: {reason}")))?;
    let mut out = Vec::new();
    for rec in &records {
        if rec.kind == RECORD_TX || rec.kind == RECORD_GOVERNANCE {
            let h = parse_tx_header(rec)?;
            out.push(open_tx(rec, &h, secret)?.0);
        }
    }
    Ok(out)
}

/// Append-only ledger file.
pub struct LedgerFile {
    file: std::fs::File,
    encoder: LedgerEncoder,
}

impl LedgerFile {
    /// Create or truncate the file at `path`.
    pub fn create(path: &Path, secret: [u8; 32]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(LedgerFile {
            file: std::fs::File::create(path)?,
            encoder: LedgerEncoder::new(secret),
        })
    }

    pub fn append(&mut self, entry: &LedgerEntry) -> Result<()> {
        let rec = self.encoder.encode(entry);
        self.file.write_all(&rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}
