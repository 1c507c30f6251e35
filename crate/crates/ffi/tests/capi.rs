use std::ffi::{CStr, CString};
use std::ptr;
use std::time::{Duration, Instant};

use lskv::api::{LocalCluster, LocalClusterOptions};
use lskv::proto::{PutRequest, PutResponse, Request, Response};
use lskv_ffi::*;

fn last_error() -> String {
    let p = lskv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn start_cluster() -> (LocalCluster, usize) {
    let cluster = LocalCluster::start(LocalClusterOptions {
        signature_interval_ms: 100,
        index_tick_ms: 10,
        ..Default::default()
    })
    .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let leader = rt.block_on(cluster.wait_for_leader(Duration::from_secs(10))).unwrap();
    (cluster, leader)
}

unsafe fn wait_committed(client: *const LskvClient, txid: LskvTxId) {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        let mut st = LskvTxStatus::Unknown;
        assert_eq!(lskv_client_tx_status(client, txid, &mut st), LskvStatus::Ok);
        if st == LskvTxStatus::Committed {
            return;
        }
        assert!(Instant::now() < deadline, "not committed: {st:?}");
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn client_round_trip_receipt_and_audit() {
    let (cluster, leader) = start_cluster();
    let url = CString::new(cluster.url(leader)).unwrap();
    let cert_pem = CString::new(std::fs::read_to_string(&cluster.config(0).service_cert).unwrap()).unwrap();

    unsafe {
        let mut client: *mut LskvClient = ptr::null_mut();
        assert_eq!(lskv_client_new(url.as_ptr(), ptr::null(), &mut client), LskvStatus::Ok);

        let (key, value) = (b"ffi/key", b"hello");
        let mut txid = LskvTxId::default();
        assert_eq!(
            lskv_client_put(client, key.as_ptr(), key.len(), value.as_ptr(), value.len(), &mut txid),
            LskvStatus::Ok
        );
        assert!(txid.term >= 1 && txid.revision >= 1);

        let (mut buf, mut len) = (ptr::null_mut(), 0usize);
        assert_eq!(lskv_client_get(client, key.as_ptr(), key.len(), &mut buf, &mut len), LskvStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(buf, len), value);
        lskv_bytes_free(buf, len);

        let missing = b"ffi/none";
        assert_eq!(
            lskv_client_get(client, missing.as_ptr(), missing.len(), &mut buf, &mut len),
            LskvStatus::NotFound
        );
        assert!(buf.is_null() && len == 0);

        wait_committed(client, txid);
        let mut receipt = ptr::null_mut();
        assert_eq!(lskv_client_receipt(client, txid, &mut receipt), LskvStatus::Ok);

        // Rebuild the exact request and response the server saw.
        let request = Request::Put(PutRequest::new(key.to_vec(), value.to_vec()));
        let mut resp = PutResponse::default();
        resp.header.raft_term = txid.term;
        resp.header.revision = txid.revision;
        let response = Response::Put(resp);
        let req = CString::new(serde_json::to_string(&request).unwrap()).unwrap();
        let res = CString::new(serde_json::to_string(&response).unwrap()).unwrap();
        assert_eq!(
            lskv_receipt_verify(receipt, req.as_ptr(), res.as_ptr(), cert_pem.as_ptr()),
            LskvStatus::Ok,
            "{}",
            last_error()
        );

        let forged = Request::Put(PutRequest::new(key.to_vec(), b"other".to_vec()));
        let forged = CString::new(serde_json::to_string(&forged).unwrap()).unwrap();
        assert_eq!(
            lskv_receipt_verify(receipt, forged.as_ptr(), res.as_ptr(), cert_pem.as_ptr()),
            LskvStatus::ClaimsMismatch
        );
        assert!(last_error().contains("claims"));
        let mut moved = PutResponse::default();
        moved.header.raft_term = txid.term;
        moved.header.revision = txid.revision + 1;
        let moved = CString::new(serde_json::to_string(&Response::Put(moved)).unwrap()).unwrap();
        assert_eq!(
            lskv_receipt_verify(receipt, req.as_ptr(), moved.as_ptr(), cert_pem.as_ptr()),
            LskvStatus::TxIdMismatch
        );
        lskv_string_free(receipt);

        let mut deleted = 0i64;
        assert_eq!(lskv_client_delete(client, key.as_ptr(), key.len(), &mut deleted), LskvStatus::Ok);
        assert_eq!(deleted, 1);
        lskv_client_free(client);
    }

    std::thread::sleep(Duration::from_millis(300));
    let mut ledger = std::fs::read(cluster.ledger_path(leader)).unwrap();
    let secret = cluster.ledger_secret().unwrap();
    unsafe {
        let mut audit = ptr::null_mut();
        assert_eq!(
            lskv_ledger_audit(ledger.as_ptr(), ledger.len(), cert_pem.as_ptr(), secret.as_ptr(), &mut audit),
            LskvStatus::Ok,
            "{}",
            last_error()
        );
        assert!(lskv_audit_transactions(audit) >= 2);
        assert!(lskv_audit_covered(audit).revision >= 1);
        let json = lskv_audit_to_json(audit);
        let report: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(report["content_verified"], true);
        lskv_string_free(json);
        lskv_audit_free(audit);

        let mid = ledger.len() / 2;
        ledger[mid] ^= 0x01;
        let mut audit = ptr::null_mut();
        assert_eq!(
            lskv_ledger_audit(ledger.as_ptr(), ledger.len(), cert_pem.as_ptr(), secret.as_ptr(), &mut audit),
            LskvStatus::AuditFailed
        );
        assert!(audit.is_null());
    }
}

#[test]
fn null_and_bad_arguments_are_reported() {
    unsafe {
        let mut client = ptr::null_mut();
        assert_eq!(lskv_client_new(ptr::null(), ptr::null(), &mut client), LskvStatus::NullArgument);
        assert!(client.is_null());
        assert_eq!(
            lskv_client_put(ptr::null(), ptr::null(), 0, ptr::null(), 0, ptr::null_mut()),
            LskvStatus::NullArgument
        );
        let junk = CString::new("not a receipt").unwrap();
        let s = lskv_receipt_verify(junk.as_ptr(), junk.as_ptr(), junk.as_ptr(), junk.as_ptr());
        assert_ne!(s, LskvStatus::Ok);
        assert!(!last_error().is_empty());
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(
            lskv_receipt_verify(bad.as_ptr().cast(), junk.as_ptr(), junk.as_ptr(), junk.as_ptr()),
            LskvStatus::InvalidUtf8
        );
        lskv_client_free(ptr::null_mut());
        lskv_audit_free(ptr::null_mut());
        lskv_string_free(ptr::null_mut());
    }
}

#[test]
fn unreachable_node_is_unavailable() {
    let url = CString::new("http://127.0.0.1:1").unwrap();
    unsafe {
        let mut client = ptr::null_mut();
        assert_eq!(lskv_client_new(url.as_ptr(), ptr::null(), &mut client), LskvStatus::Ok);
        let k = b"k";
        let mut txid = LskvTxId::default();
        assert_eq!(
            lskv_client_put(client, k.as_ptr(), 1, k.as_ptr(), 1, &mut txid),
            LskvStatus::Unavailable
        );
        lskv_client_free(client);
    }
}

#[test]
fn header_matches_exports() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lskv.h")).unwrap();
    for f in [
        "lskv_last_error",
        "lskv_string_free",
        "lskv_bytes_free",
        "lskv_receipt_verify",
        "lskv_ledger_audit",
        "lskv_audit_free",
        "lskv_client_new",
        "lskv_client_put",
        "lskv_client_get",
        "lskv_client_delete",
        "lskv_client_tx_status",
        "lskv_client_receipt",
        "lskv_client_free",
        "typedef struct LskvClient LskvClient",
        "LSKV_STATUS_CLAIMS_MISMATCH = 20",
        "LSKV_STATUS_TX_ID_MISMATCH = 23",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let src = std::env::temp_dir().join(format!("lskv_header_{}.c", std::process::id()));
    std::fs::write(
        &src,
        "#include \"lskv.h\"\nint main(void) { LskvClient *c = 0; LskvTxId t = {1, 2}; (void)t;\n\
         return lskv_client_new(\"http://x\", 0, &c) == LSKV_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler, skipping");
            return;
        }
    };
    std::fs::remove_file(&src).ok();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
