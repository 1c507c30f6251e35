use serde::{Deserialize, Serialize};

use crate::crypto::{verify_signature, Certificate, KeyPair};
use crate::kv::TxEffects;
use crate::proto::SetPublicPrefixRequest;
use crate::types::{Digest, NodeId, TxId};

/// The three values hashed into a Merkle leaf.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafComponents {
    pub write_set_digest: Digest,
    pub commit_evidence: String,
    pub claims_digest: Digest,
}

impl LeafComponents {
    pub fn leaf(&self) -> Digest {
        leaf_digest(&self.write_set_digest, &self.commit_evidence, &self.claims_digest)
    }

    /// Transaction ID spelled out in the commit evidence, if well formed.
    pub fn evidence_txid(&self) -> Option<TxId> {
        let rest = self.commit_evidence.strip_prefix("ce:")?;
        let (id, _) = rest.split_once(':')?;
        let (term, revision) = id.split_once('.')?;
        Some(TxId::new(term.parse().ok()?, revision.parse().ok()?))
    }
}

pub fn leaf_digest(write_set_digest: &Digest, commit_evidence: &str, claims_digest: &Digest) -> Digest {
    let ce = Digest::of(commit_evidence.as_bytes());
    Digest::of_parts(&[write_set_digest.as_bytes(), ce.as_bytes(), claims_digest.as_bytes()])
}

/// Per-transaction evidence string, unguessable without the ledger secret.
pub fn commit_evidence(ledger_secret: &[u8; 32], txid: TxId) -> String {
    let d = Digest::of_parts(&[
        ledger_secret,
        &txid.term.to_le_bytes(),
        &txid.revision.to_le_bytes(),
    ]);
    format!("ce:{}.{}:{}", txid.term, txid.revision, d.to_hex())
}

/// A governance action as recorded in the ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GovernanceRecord {
    pub prefix: Vec<u8>,
    pub admin_cert: String,
    pub signature: String,
}

impl From<&SetPublicPrefixRequest> for GovernanceRecord {
    fn from(r: &SetPublicPrefixRequest) -> Self {
        GovernanceRecord {
            prefix: r.prefix.clone(),
            admin_cert: r.admin_cert.clone(),
            signature: r.signature.clone(),
        }
    }
}

/// A mutating transaction as carried in the log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxEntry {
    pub txid: TxId,
    pub effects: TxEffects,
    pub claims_digest: Digest,
    pub governance: Option<GovernanceRecord>,
}

impl TxEntry {
    pub fn components(&self, ledger_secret: &[u8; 32]) -> LeafComponents {
        LeafComponents {
            write_set_digest: self.effects.digest(),
            commit_evidence: commit_evidence(ledger_secret, self.txid),
            claims_digest: self.claims_digest,
        }
    }
}

/// Signed Merkle root. Not itself a leaf.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureEntry {
    pub node: NodeId,
    pub root: Digest,
    /// Signature over the raw 32-byte root.
    #[serde(with = "crate::types::hexbytes")]
    pub signature: Vec<u8>,
    /// Term of the signing leader and the last revision in the tree.
    pub covers_up_to: TxId,
    /// Signature binding `covers_up_to` and the signer to the root.
    #[serde(with = "crate::types::hexbytes")]
    pub entry_signature: Vec<u8>,
    pub cert: Certificate,
}

impl SignatureEntry {
    pub fn sign(key: &KeyPair, cert: &Certificate, root: Digest, covers_up_to: TxId) -> Self {
        let node = NodeId::new(cert.subject.clone());
        SignatureEntry {
            signature: key.sign(root.as_bytes()).to_vec(),
            entry_signature: key.sign(&entry_message(&node, &root, covers_up_to)).to_vec(),
            node,
            root,
            covers_up_to,
            cert: cert.clone(),
        }
    }

    /// Both signatures verify under the embedded certificate's key.
    pub fn verify(&self) -> bool {
        self.node.as_str() == self.cert.subject
            && verify_signature(&self.cert.public_key, self.root.as_bytes(), &self.signature)
            && verify_signature(
                &self.cert.public_key,
                &entry_message(&self.node, &self.root, self.covers_up_to),
                &self.entry_signature,
            )
    }
}

fn entry_message(node: &NodeId, root: &Digest, covers: TxId) -> Vec<u8> {
    let mut m = b"lskv-signature-v1\0".to_vec();
    m.extend_from_slice(root.as_bytes());
    m.extend_from_slice(&covers.term.to_le_bytes());
    m.extend_from_slice(&covers.revision.to_le_bytes());
    m.extend_from_slice(node.as_str().as_bytes());
    m
}

/// One replicated log payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedgerEntry {
    Tx(TxEntry),
    Signature(SignatureEntry),
}

impl LedgerEntry {
    pub fn as_tx(&self) -> Option<&TxEntry> {
        match self {
            LedgerEntry::Tx(t) => Some(t),
            LedgerEntry::Signature(_) => None,
        }
    }

    pub fn as_signature(&self) -> Option<&SignatureEntry> {
        match self {
            LedgerEntry::Signature(s) => Some(s),
            LedgerEntry::Tx(_) => None,
        }
    }
}
