//! Write receipts and their offline verification.
//!
//! A receipt binds a request and its response to a signed Merkle root. The
//! verifier recomputes the claims digest from the request and response it
//! holds, folds the leaf through the proof, checks the root signature under
//! the node certificate, and checks that the service endorses that node.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::crypto::{verify_signature, Certificate};
use crate::ledger::{fold_proof, LeafComponents, ProofStep, Side};
use crate::proto::{Request, Response};
use crate::types::{Digest, TxId};

/// Deterministic JSON: object keys sorted, no insignificant whitespace.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push(':');
                write_canonical(&m[k.as_str()], out);
            }
            out.push('}');
        }
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

fn strip_headers(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("header");
            for x in m.values_mut() {
                strip_headers(x);
            }
        }
        Value::Array(a) => a.iter_mut().for_each(strip_headers),
        _ => {}
    }
}

/// Digest of the request and its response with every `header` removed.
pub fn claims_digest(request: &Request, response: &Response) -> Digest {
    let req = serde_json::to_value(request).expect("request serializes");
    let mut resp = serde_json::to_value(response).expect("response serializes");
    strip_headers(&mut resp);
    let mut claims = serde_json::Map::new();
    claims.insert("request".into(), req);
    claims.insert("response".into(), resp);
    Digest::of(canonical_json(&Value::Object(claims)).as_bytes())
}

/// A proof step written as a one-key map, `left: <hex>` or `right: <hex>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub enum ReceiptStep {
    Left(Digest),
    Right(Digest),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<Digest>,
}

impl From<ReceiptStep> for StepRepr {
    fn from(s: ReceiptStep) -> Self {
        match s {
            ReceiptStep::Left(d) => StepRepr { left: Some(d), right: None },
            ReceiptStep::Right(d) => StepRepr { left: None, right: Some(d) },
        }
    }
}

impl TryFrom<StepRepr> for ReceiptStep {
    type Error = String;

    fn try_from(r: StepRepr) -> Result<Self, String> {
        match (r.left, r.right) {
            (Some(d), None) => Ok(ReceiptStep::Left(d)),
            (None, Some(d)) => Ok(ReceiptStep::Right(d)),
            _ => Err("a proof step needs exactly one of left or right".into()),
        }
    }
}

impl From<&ProofStep> for ReceiptStep {
    fn from(s: &ProofStep) -> Self {
        match s.side {
            Side::Left => ReceiptStep::Left(s.digest),
            Side::Right => ReceiptStep::Right(s.digest),
        }
    }
}

impl From<&ReceiptStep> for ProofStep {
    fn from(s: &ReceiptStep) -> Self {
        match s {
            ReceiptStep::Left(d) => ProofStep { side: Side::Left, digest: *d },
            ReceiptStep::Right(d) => ProofStep { side: Side::Right, digest: *d },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub node_id: String,
    /// PEM certificate of the signing node.
    pub cert: String,
    pub leaf_components: LeafComponents,
    pub proof: Vec<ReceiptStep>,
    /// Base64 signature over the Merkle root.
    pub signature: String,
}

impl Receipt {
    pub fn new(cert: &Certificate, leaf_components: LeafComponents, proof: &[ProofStep], signature: &[u8]) -> Self {
        Receipt {
            node_id: cert.subject.clone(),
            cert: cert.to_pem(),
            leaf_components,
            proof: proof.iter().map(ReceiptStep::from).collect(),
            signature: STANDARD.encode(signature),
        }
    }

    /// Root the proof folds to.
    pub fn root(&self) -> Digest {
        let steps: Vec<ProofStep> = self.proof.iter().map(ProofStep::from).collect();
        fold_proof(&self.leaf_components.leaf(), &steps)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("receipt serializes")
    }

    pub fn from_yaml(s: &str) -> Result<Self, crate::Error> {
        serde_yaml::from_str(s).map_err(|e| crate::Error::Codec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("receipt serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, crate::Error> {
        Ok(serde_json::from_str(s)?)
    }

    /// Parse either interchange form.
    pub fn parse(s: &str) -> Result<Self, crate::Error> {
        if s.trim_start().starts_with('{') {
            Self::from_json(s)
        } else {
            Self::from_yaml(s)
        }
    }
}

/// Which verification stage failed.
#[derive(Clone, Debug, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", content = "detail", rename_all = "snake_case")]
pub enum VerifyError {
    #[error("claims digest mismatch: receipt has {receipt}, request and response hash to {computed}")]
    ClaimsMismatch { receipt: Digest, computed: Digest },
    #[error("response is for transaction {response} but the receipt is for {receipt}")]
    TxIdMismatch { receipt: TxId, response: TxId },
    #[error("proof or signature invalid: {0}")]
    ProofOrSignatureInvalid(String),
    #[error("untrusted node: {0}")]
    UntrustedNode(String),
}

impl VerifyError {
    pub fn stage(&self) -> &'static str {
        match self {
            VerifyError::ClaimsMismatch { .. } => "claims_mismatch",
            VerifyError::TxIdMismatch { .. } => "txid_mismatch",
            VerifyError::ProofOrSignatureInvalid(_) => "proof_or_signature_invalid",
            VerifyError::UntrustedNode(_) => "untrusted_node",
        }
    }
}

/// Summary of a successful verification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verified {
    pub node_id: String,
    pub root: Digest,
}

pub fn verify_receipt(
    receipt: &Receipt,
    service_cert: &Certificate,
    request: &Request,
    response: &Response,
) -> Result<Verified, VerifyError> {
    let computed = claims_digest(request, response);
    if computed != receipt.leaf_components.claims_digest {
        return Err(VerifyError::ClaimsMismatch {
            receipt: receipt.leaf_components.claims_digest,
            computed,
        });
    }
    let receipt_txid = receipt
        .leaf_components
        .evidence_txid()
        .ok_or_else(|| VerifyError::ProofOrSignatureInvalid("malformed commit evidence".into()))?;
    let h = response.header();
    let response_txid = TxId::new(h.raft_term, h.revision);
    if receipt_txid != response_txid {
        return Err(VerifyError::TxIdMismatch {
            receipt: receipt_txid,
            response: response_txid,
        });
    }
    let cert = Certificate::from_pem(&receipt.cert)
        .map_err(|e| VerifyError::ProofOrSignatureInvalid(format!("unreadable node certificate: {e}")))?;
    let signature = STANDARD
        .decode(&receipt.signature)
        .map_err(|e| VerifyError::ProofOrSignatureInvalid(format!("signature is not base64: {e}")))?;
    let root = receipt.root();
    if !verify_signature(&cert.public_key, root.as_bytes(), &signature) {
        return Err(VerifyError::ProofOrSignatureInvalid(
            "signature does not verify over the recomputed root".into(),
        ));
    }
    if cert.subject != receipt.node_id {
        return Err(VerifyError::UntrustedNode(format!(
            "receipt names node {:?} but the certificate is for {:?}",
            receipt.node_id, cert.subject
        )));
    }
    if !cert.is_endorsed_by(service_cert) {
        return Err(VerifyError::UntrustedNode(format!(
            "certificate of {} is not endorsed by service {}",
            cert.subject, service_cert.subject
        )));
    }
    Ok(Verified {
        node_id: receipt.node_id.clone(),
        root,
    })
}
