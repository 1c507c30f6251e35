//! Offline ledger verification.
//!
//! Rebuilds the Merkle tree from the records, checks every signature entry
//! against its node certificate and the service certificate, and with the
//! ledger secret also decrypts each transaction and recomputes its leaf.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{open_tx, parse_signature, parse_tx_header, split_records, RECORD_GOVERNANCE, RECORD_SIGNATURE, RECORD_TX};
use super::entry::{commit_evidence, leaf_digest, GovernanceRecord};
use super::merkle::MerkleTree;
use crate::crypto::{verify_signature, Certificate};
use crate::proto::governance_message;
use crate::types::{hex_decode, Term, TxId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernanceEvent {
    pub txid: TxId,
    pub prefix: String,
    pub admin: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub records: usize,
    pub transactions: usize,
    pub signatures: usize,
    /// Last transaction covered by a signature entry.
    pub covered: TxId,
    pub last_txid: TxId,
    /// Transactions after the last signature; present but not verifiable.
    pub unsigned_suffix: usize,
    pub public_writes: usize,
    pub governance: Vec<GovernanceEvent>,
    /// Whether transaction contents were decrypted and checked.
    pub content_verified: bool,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("audit failed at record {record} (byte offset {offset}): {reason}")]
pub struct AuditFailure {
    pub record: usize,
    pub offset: usize,
    pub reason: String,
}

pub fn verify_ledger(
    data: &[u8],
    service_cert: &Certificate,
    ledger_secret: Option<&[u8; 32]>,
) -> Result<AuditReport, AuditFailure> {
    let records = split_records(data).map_err(|(offset, reason)| AuditFailure {
        record: 0,
        offset,
        reason,
    })?;
    let mut report = AuditReport {
        content_verified: ledger_secret.is_some(),
        ..Default::default()
    };
    let mut tree = MerkleTree::new();
    let mut prefixes: BTreeSet<Vec<u8>> = BTreeSet::new();
    let mut last_term: Term = 0;
    let mut since_sig = 0usize;

    for (i, rec) in records.iter().enumerate() {
        let fail = |reason: String| AuditFailure {
            record: i,
            offset: rec.offset,
            reason,
        };
        report.records += 1;
        match rec.kind {
            RECORD_TX | RECORD_GOVERNANCE => {
                let h = parse_tx_header(rec).map_err(|e| fail(e.to_string()))?;
                let expected_rev = tree.len() as i64 + 1;
                if h.txid.revision != expected_rev {
                    return Err(fail(format!(
                        "revision {} out of order, expected {expected_rev}",
                        h.txid.revision
                    )));
                }
                if h.txid.term < last_term || h.txid.term < 1 {
                    return Err(fail(format!("term {} goes backwards", h.txid.term)));
                }
                last_term = h.txid.term;
                if (rec.kind == RECORD_GOVERNANCE) != h.public.governance.is_some()
                    || (h.public.governance.is_none() && !h.public.public_prefixes.is_empty())
                {
                    return Err(fail("record type does not match its governance section".into()));
                }
                if h.public.writes.iter().any(|(k, _)| !prefixes.iter().any(|p| k.starts_with(p))) {
                    return Err(fail("plaintext write outside any public prefix".into()));
                }
                if let Some(g) = &h.public.governance {
                    let admin = authorize_governance(g, service_cert).map_err(&fail)?;
                    if h.public.public_prefixes != [g.prefix.clone()] {
                        return Err(fail("governance record does not match the registered prefix".into()));
                    }
                    report.governance.push(GovernanceEvent {
                        txid: h.txid,
                        prefix: String::from_utf8_lossy(&g.prefix).into_owned(),
                        admin,
                    });
                }
                if let Some(secret) = ledger_secret {
                    let (tx, ce) = open_tx(rec, &h, secret).map_err(|e| fail(e.to_string()))?;
                    if ce != commit_evidence(secret, h.txid) {
                        return Err(fail("commit evidence does not match the ledger secret".into()));
                    }
                    if tx.effects.writes.keys().any(|k| {
                        prefixes.iter().any(|p| k.starts_with(p))
                            != h.public.writes.iter().any(|(pk, _)| pk == k)
                    }) {
                        return Err(fail("write stored in the wrong section".into()));
                    }
                    let leaf = leaf_digest(&tx.effects.digest(), &ce, &tx.claims_digest);
                    if leaf != h.leaf {
                        return Err(fail("leaf digest does not match record contents".into()));
                    }
                }
                report.public_writes += h.public.writes.len();
                prefixes.extend(h.public.public_prefixes.iter().cloned());
                tree.append(h.leaf);
                report.transactions += 1;
                report.last_txid = h.txid;
                since_sig += 1;
            }
            RECORD_SIGNATURE => {
                let sig = parse_signature(rec).map_err(|e| fail(e.to_string()))?;
                if sig.covers_up_to.term < last_term {
                    return Err(fail(format!("signature term {} goes backwards", sig.covers_up_to.term)));
                }
                last_term = sig.covers_up_to.term;
                if sig.covers_up_to.revision != tree.len() as i64 {
                    return Err(fail(format!(
                        "signature covers revision {} but the tree has {} leaves",
                        sig.covers_up_to.revision,
                        tree.len()
                    )));
                }
                if sig.root != tree.root() {
                    return Err(fail("signed root does not match the rebuilt tree".into()));
                }
                if !sig.cert.is_endorsed_by(service_cert) {
                    return Err(fail(format!("node {} is not endorsed by the service", sig.node)));
                }
                if !sig.verify() {
                    return Err(fail(format!("signature by {} does not verify", sig.node)));
                }
                report.signatures += 1;
                report.covered = TxId::new(report.last_txid.term, tree.len() as i64);
                since_sig = 0;
            }
            other => return Err(fail(format!("unknown record type {other}"))),
        }
    }
    report.unsigned_suffix = since_sig;
    Ok(report)
}

/// Check that a governance action is signed by an admin the service endorses.
/// Returns the admin's subject.
pub fn authorize_governance(g: &GovernanceRecord, service_cert: &Certificate) -> Result<String, String> {
    let cert = Certificate::from_pem(&g.admin_cert).map_err(|e| format!("bad admin certificate: {e}"))?;
    if !cert.is_endorsed_by(service_cert) {
        return Err("admin certificate is not endorsed by the service".into());
    }
    let sig = hex_decode(&g.signature).map_err(|e| format!("bad admin signature: {e}"))?;
    if !verify_signature(&cert.public_key, &governance_message(&g.prefix), &sig) {
        return Err("admin signature does not verify".into());
    }
    Ok(cert.subject)
}
