//! Signing keys and the certificate envelope used for node identity.
//!
//! A certificate binds a subject name to an Ed25519 public key and carries an
//! endorsement signature by its issuer. The service certificate is
//! self-issued; node certificates are issued by the service key. Certificates
//! travel as a PEM-like text block so they can be embedded in receipts.

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Digest;

const CERT_LABEL: &str = "LSKV CERTIFICATE";
const KEY_LABEL: &str = "LSKV PRIVATE KEY";
const ENDORSEMENT_DOMAIN: &[u8] = b"lskv-cert-v1\0";

/// Ed25519 key pair.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public", &hex::encode(self.public_key()))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        KeyPair {
            signing: SigningKey::generate(rng),
        }
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    pub fn seed(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        self.signing.sign(msg).to_bytes()
    }

    /// Issue a certificate for `subject` holding `public_key`, endorsed by this key.
    pub fn issue(&self, issuer: &str, subject: &str, public_key: [u8; 32]) -> Certificate {
        let msg = endorsement_message(subject, &public_key, issuer);
        Certificate {
            subject: subject.to_owned(),
            public_key,
            issuer: issuer.to_owned(),
            endorsement: self.sign(&msg).to_vec(),
        }
    }

    /// A self-issued certificate, used for the service identity.
    pub fn self_certificate(&self, subject: &str) -> Certificate {
        self.issue(subject, subject, self.public_key())
    }

    pub fn to_pem(&self) -> String {
        pem_encode(KEY_LABEL, &self.seed())
    }

    pub fn from_pem(text: &str) -> Result<Self> {
        let raw = pem_decode(KEY_LABEL, text)?;
        let seed: [u8; 32] = raw
            .try_into()
            .map_err(|_| Error::Codec("private key must be 32 bytes".into()))?;
        Ok(KeyPair::from_seed(seed))
    }
}

/// Verify an Ed25519 signature. Returns false on any malformed input.
pub fn verify_signature(public_key: &[u8], msg: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(signature) else {
        return false;
    };
    vk.verify(msg, &sig).is_ok()
}

fn endorsement_message(subject: &str, public_key: &[u8; 32], issuer: &str) -> Vec<u8> {
    let mut m = Vec::with_capacity(ENDORSEMENT_DOMAIN.len() + subject.len() + issuer.len() + 40);
    m.extend_from_slice(ENDORSEMENT_DOMAIN);
    m.extend_from_slice(&(subject.len() as u32).to_le_bytes());
    m.extend_from_slice(subject.as_bytes());
    m.extend_from_slice(public_key);
    m.extend_from_slice(&(issuer.len() as u32).to_le_bytes());
    m.extend_from_slice(issuer.as_bytes());
    m
}

/// Certificate envelope: `{subject, public key, issuer, endorsement}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub subject: String,
    #[serde(with = "crate::types::hexbytes::array32")]
    pub public_key: [u8; 32],
    pub issuer: String,
    #[serde(with = "crate::types::hexbytes")]
    pub endorsement: Vec<u8>,
}

impl Certificate {
    /// Whether `issuer` endorses this certificate.
    pub fn is_endorsed_by(&self, issuer: &Certificate) -> bool {
        self.issuer == issuer.subject
            && verify_signature(
                &issuer.public_key,
                &endorsement_message(&self.subject, &self.public_key, &self.issuer),
                &self.endorsement,
            )
    }

    /// Truncated hex SHA-256 of the public key, used for cluster and member IDs.
    pub fn key_id(&self) -> String {
        key_id(&self.public_key)
    }

    pub fn to_pem(&self) -> String {
        let body = serde_json::to_vec(self).expect("certificate serializes");
        pem_encode(CERT_LABEL, &body)
    }

    pub fn from_pem(text: &str) -> Result<Self> {
        let raw = pem_decode(CERT_LABEL, text)?;
        Ok(serde_json::from_slice(&raw)?)
    }
}

/// First 16 hex characters of SHA-256(public key).
pub fn key_id(public_key: &[u8]) -> String {
    Digest::of(public_key).to_hex()[..16].to_owned()
}

fn pem_encode(label: &str, data: &[u8]) -> String {
    let b64 = STANDARD.encode(data);
    let mut out = format!("-----BEGIN {label}-----\n");
    for chunk in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

fn pem_decode(label: &str, text: &str) -> Result<Vec<u8>> {
    let begin = format!("-----BEGIN {label}-----");
    let end = format!("-----END {label}-----");
    let start = text
        .find(&begin)
        .ok_or_else(|| Error::Codec(format!("missing {begin}")))?
        + begin.len();
    let stop = text[start..]
        .find(&end)
        .ok_or_else(|| Error::Codec(format!("missing {end}")))?
        + start;
    let body: String = text[start..stop].split_whitespace().collect();
    STANDARD
        .decode(body)
        .map_err(|e| Error::Codec(format!("bad base64 in {label}: {e}")))
}

/// Key material for one service: the service identity and the shared ledger secret.
#[derive(Clone, Debug)]
pub struct ServiceKeys {
    pub service_key: KeyPair,
    pub service_cert: Certificate,
    pub ledger_secret: [u8; 32],
}

impl ServiceKeys {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, name: &str) -> Self {
        let service_key = KeyPair::generate(rng);
        let service_cert = service_key.self_certificate(name);
        let mut ledger_secret = [0u8; 32];
        rng.fill_bytes(&mut ledger_secret);
        ServiceKeys {
            service_key,
            service_cert,
            ledger_secret,
        }
    }

    /// Create a node key pair with a certificate endorsed by the service.
    pub fn enroll_node<R: RngCore + CryptoRng>(&self, rng: &mut R, node: &str) -> NodeKeys {
        let key = KeyPair::generate(rng);
        let cert = self
            .service_key
            .issue(&self.service_cert.subject, node, key.public_key());
        NodeKeys { key, cert }
    }
}

/// A node's signing key and its endorsed certificate.
#[derive(Clone, Debug)]
pub struct NodeKeys {
    pub key: KeyPair,
    pub cert: Certificate,
}
