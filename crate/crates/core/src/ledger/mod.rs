//! Append-only transaction ledger: Merkle tree, signed roots, file format and audit.

pub mod audit;
pub mod codec;
pub mod entry;
pub mod merkle;

pub use audit::{authorize_governance, verify_ledger, AuditFailure, AuditReport, GovernanceEvent};
pub use codec::{read_transactions, LedgerEncoder, LedgerFile};
pub use entry::{commit_evidence, leaf_digest, GovernanceRecord, LeafComponents, LedgerEntry, SignatureEntry, TxEntry};
pub use merkle::{fold_proof, MerkleTree, ProofPath, ProofStep, Side};
