mod common;

use common::SingleNode;
use lskv::crypto::ServiceKeys;
use lskv::ledger::codec::{split_records, RECORD_SIGNATURE};
use lskv::ledger::verify_ledger;
use lskv::proto::{PutRequest, Request, Response, SetPublicPrefixRequest};
use lskv::receipt::{verify_receipt, Receipt, ReceiptStep, VerifyError};
use lskv::TxId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Root over `leaves` where an unpaired last node is promoted unchanged.
fn oracle_root(leaves: &[[u8; 32]]) -> [u8; 32] {
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|c| if c.len() == 2 { sha(&[&c[0], &c[1]]) } else { c[0] })
            .collect();
    }
    level[0]
}

fn oracle_leaf(r: &Receipt) -> [u8; 32] {
    let lc = &r.leaf_components;
    let ce = sha(&[lc.commit_evidence.as_bytes()]);
    sha(&[lc.write_set_digest.as_bytes(), &ce, lc.claims_digest.as_bytes()])
}

fn oracle_fold(r: &Receipt) -> [u8; 32] {
    r.proof.iter().fold(oracle_leaf(r), |acc, step| match step {
        ReceiptStep::Left(d) => sha(&[d.as_bytes(), &acc]),
        ReceiptStep::Right(d) => sha(&[&acc, d.as_bytes()]),
    })
}

struct Written {
    node: SingleNode,
    writes: Vec<(TxId, Request, Response)>,
}

fn write_some(seed: u64, n: usize, sign_every: usize) -> Written {
    let mut node = SingleNode::new(seed);
    let mut writes = Vec::new();
    for i in 0..n {
        node.advance(1);
        let req = Request::Put(PutRequest::new(format!("k{}", i % 17), format!("v{i}")));
        let resp = node.handle(&req).unwrap();
        let h = resp.header().clone();
        writes.push((TxId::new(h.raft_term, h.revision), req, resp));
        if (i + 1) % sign_every == 0 {
            node.sign();
        }
    }
    node.sign();
    Written { node, writes }
}

#[test]
fn receipts_fold_to_the_independently_computed_signed_root() {
    let w = write_some(11, 120, 7);
    let cert = w.node.service.service_cert.clone();
    let receipts: Vec<Receipt> = w.writes.iter().map(|(id, _, _)| w.node.node.receipt(*id).unwrap()).collect();
    let leaves: Vec<[u8; 32]> = receipts.iter().map(oracle_leaf).collect();
    for ((id, req, resp), r) in w.writes.iter().zip(&receipts) {
        verify_receipt(r, &cert, req, resp).unwrap();
        // The receipt is signed by the first signature covering it.
        let covered = (id.revision as usize).div_ceil(7) * 7;
        let size = covered.min(leaves.len());
        assert_eq!(oracle_fold(r), oracle_root(&leaves[..size]), "{id}");
        assert_eq!(r.root().as_bytes(), &oracle_fold(r));
    }
}

#[test]
fn mutated_leaf_components_never_verify() {
    let w = write_some(12, 40, 40);
    let cert = w.node.service.service_cert.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (id, req, resp) = &w.writes[rng.gen_range(0..w.writes.len())];
        let mut r = w.node.node.receipt(*id).unwrap();
        let field = rng.gen_range(0..3);
        let lc = &mut r.leaf_components;
        match field {
            0 => lc.write_set_digest = flip_digest(&mut rng, &lc.write_set_digest),
            1 => {
                let mut b = lc.commit_evidence.clone().into_bytes();
                let digest_at = lc.commit_evidence.rfind(':').unwrap() + 1;
                let i = rng.gen_range(digest_at..b.len());
                b[i] = if b[i] == b'0' { b'1' } else { b'0' };
                lc.commit_evidence = String::from_utf8(b).unwrap();
            }
            _ => lc.claims_digest = flip_digest(&mut rng, &lc.claims_digest),
        }
        let err = verify_receipt(&r, &cert, req, resp).unwrap_err();
        match field {
            2 => assert!(matches!(err, VerifyError::ClaimsMismatch { .. }), "{err}"),
            _ => assert!(matches!(err, VerifyError::ProofOrSignatureInvalid(_)), "{err}"),
        }
    }
}

#[test]
fn receipts_bind_the_transaction_id_of_the_response() {
    let w = write_some(16, 10, 10);
    let cert = w.node.service.service_cert.clone();
    let (id, req, resp) = &w.writes[4];
    let r = w.node.node.receipt(*id).unwrap();
    let (_, _, other) = &w.writes[5];
    let mut moved = resp.clone();
    if let (Response::Put(m), Response::Put(o)) = (&mut moved, other) {
        m.header = o.header.clone();
    }
    let err = verify_receipt(&r, &cert, req, &moved).unwrap_err();
    assert!(matches!(err, VerifyError::TxIdMismatch { .. }), "{err}");
    let mut relabelled = r.clone();
    relabelled.leaf_components.commit_evidence = relabelled.leaf_components.commit_evidence.replacen(
        &format!("ce:{}.{}:", id.term, id.revision),
        &format!("ce:{}.{}:", id.term, id.revision + 1),
        1,
    );
    let err = verify_receipt(&relabelled, &cert, req, resp).unwrap_err();
    assert!(matches!(err, VerifyError::TxIdMismatch { .. }), "{err}");
}

fn flip_digest(rng: &mut ChaCha8Rng, d: &lskv::Digest) -> lskv::Digest {
    let mut b = *d.as_bytes();
    b[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
    lskv::Digest(b)
}

#[test]
fn pending_and_unknown_transactions_have_no_receipt() {
    let mut n = SingleNode::new(13);
    n.handle(&Request::Put(PutRequest::new("a", "b"))).unwrap();
    n.sign();
    let resp = n.handle(&Request::Put(PutRequest::new("a", "c"))).unwrap();
    let id = TxId::new(resp.header().raft_term, resp.header().revision);
    assert!(matches!(n.node.receipt(id), Err(lskv::Error::NotYetSignable(_))));
    assert!(matches!(n.node.receipt(TxId::new(1, 99)), Err(lskv::Error::NotFound(_))));
    assert!(matches!(n.node.receipt(TxId::new(7, 1)), Err(lskv::Error::InvalidTx(_))));
    assert!(n.node.receipt(TxId::new(1, 1)).is_ok());
}

/// End of the last signature record: everything before it is covered.
fn covered_len(data: &[u8]) -> usize {
    split_records(data)
        .unwrap()
        .iter()
        .filter(|r| r.kind == RECORD_SIGNATURE)
        .map(|r| r.offset + r.bytes.len())
        .max()
        .unwrap_or(0)
}

fn honest_ledger() -> (Vec<u8>, ServiceKeys) {
    let mut w = write_some(14, 60, 9);
    w.node.handle(&Request::Put(PutRequest::new("tail", "unsigned"))).unwrap();
    (w.node.ledger.clone(), w.node.service.clone())
}

#[test]
fn honest_ledger_passes_audit() {
    let (data, svc) = honest_ledger();
    let r = verify_ledger(&data, &svc.service_cert, Some(&svc.ledger_secret)).unwrap();
    assert_eq!(r.transactions, 60);
    assert_eq!(r.covered, TxId::new(1, 60));
    assert!(r.content_verified);
    verify_ledger(&data, &svc.service_cert, None).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn any_covered_byte_flip_fails_audit(pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let (mut data, svc) = honest_ledger();
        let i = pos.index(covered_len(&data));
        data[i] ^= 1 << bit;
        prop_assert!(verify_ledger(&data, &svc.service_cert, Some(&svc.ledger_secret)).is_err());
    }
}

#[test]
fn public_prefix_values_are_plaintext_and_private_ones_are_not() {
    let mut n = SingleNode::new(15);
    let admin = n.service.enroll_node(&mut ChaCha8Rng::seed_from_u64(1), "admin");
    n.handle(&Request::SetPublicPrefix(SetPublicPrefixRequest::signed("pub/", &admin)))
        .unwrap();
    n.handle(&Request::Put(PutRequest::new("pub/a", "visible-PLAIN-71"))).unwrap();
    n.handle(&Request::Put(PutRequest::new("priv/a", "hidden-SECRET-72"))).unwrap();
    n.sign();
    let contains = |needle: &[u8]| n.ledger.windows(needle.len()).any(|w| w == needle);
    assert!(contains(b"visible-PLAIN-71"));
    assert!(contains(b"pub/a"));
    assert!(!contains(b"hidden-SECRET-72"));
    assert!(!contains(b"priv/a"));
    let r = verify_ledger(&n.ledger, &n.service.service_cert, None).unwrap();
    assert_eq!(r.public_writes, 1);
    assert_eq!(r.governance.len(), 1);
}
