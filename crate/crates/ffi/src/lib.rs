//! C bindings for the lskv client, offline receipt verification and ledger
//! audit.
//!
//! Every fallible function returns an [`LskvStatus`]. On failure a message is
//! kept per thread and can be read with [`lskv_last_error`]. Objects handed to
//! C are opaque handles that must be released with their `_free` function;
//! strings and byte buffers returned by the library are released with
//! [`lskv_string_free`] and [`lskv_bytes_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use lskv::client::{verify_intermediary, Client, TxStatus};
use lskv::crypto::Certificate;
use lskv::ledger::{verify_ledger, AuditReport};
use lskv::proto::{DeleteRangeRequest, Request, Response};
use lskv::receipt::Receipt;
use lskv::{Error, TxId};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LskvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Unavailable = 5,
    Io = 6,
    Codec = 7,
    /// The server rejected the request; see [`lskv_last_error`].
    Rejected = 8,
    /// Request and response do not hash to the receipt's claims.
    ClaimsMismatch = 20,
    /// The Merkle proof or root signature does not check out.
    ProofOrSignatureInvalid = 21,
    /// The node certificate is not endorsed by the service.
    UntrustedNode = 22,
    /// The response header names a different transaction than the receipt.
    TxIdMismatch = 23,
    AuditFailed = 30,
    Internal = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LskvTxId {
    pub term: i64,
    pub revision: i64,
}

impl From<TxId> for LskvTxId {
    fn from(t: TxId) -> Self {
        LskvTxId {
            term: t.term,
            revision: t.revision,
        }
    }
}

impl From<LskvTxId> for TxId {
    fn from(t: LskvTxId) -> Self {
        TxId::new(t.term, t.revision)
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LskvTxStatus {
    Unknown = 0,
    Pending = 1,
    Committed = 2,
    Invalid = 3,
}

impl From<TxStatus> for LskvTxStatus {
    fn from(s: TxStatus) -> Self {
        match s {
            TxStatus::Unknown => LskvTxStatus::Unknown,
            TxStatus::Pending => LskvTxStatus::Pending,
            TxStatus::Committed => LskvTxStatus::Committed,
            TxStatus::Invalid => LskvTxStatus::Invalid,
        }
    }
}

/// Blocking client bound to one node URL.
pub struct LskvClient {
    rt: tokio::runtime::Runtime,
    client: Client,
}

/// Result of a successful ledger audit.
pub struct LskvAudit {
    report: AuditReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: LskvStatus, message: impl std::fmt::Display) -> LskvStatus {
    let msg = CString::new(message.to_string().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
    status
}

fn status_of(e: &Error) -> LskvStatus {
    match e {
        Error::InvalidArgument(_) => LskvStatus::InvalidArgument,
        Error::NotFound(_) | Error::LeaseNotFound(_) => LskvStatus::NotFound,
        Error::Unavailable(_) | Error::NotLeader { .. } => LskvStatus::Unavailable,
        Error::Io(_) => LskvStatus::Io,
        Error::Codec(_) => LskvStatus::Codec,
        Error::Internal(_) => LskvStatus::Internal,
        _ => LskvStatus::Rejected,
    }
}

fn fail_with(e: Error) -> LskvStatus {
    fail(status_of(&e), e)
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, LskvStatus> {
    if p.is_null() {
        return Err(fail(LskvStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(LskvStatus::InvalidUtf8, e))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize) -> Result<&'a [u8], LskvStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LskvStatus::NullArgument, "null buffer with non-zero length"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lskv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lskv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `data` and `len` must come from one call of this library that returned a
/// byte buffer, and the buffer must not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lskv_bytes_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

/// Verify a receipt (JSON or YAML) against the request and response JSON the
/// caller holds and the service certificate PEM, without contacting any node.
///
/// # Safety
/// All arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn lskv_receipt_verify(
    receipt: *const c_char,
    request_json: *const c_char,
    response_json: *const c_char,
    service_cert_pem: *const c_char,
) -> LskvStatus {
    let receipt = try_ffi!(str_arg(receipt));
    let request = try_ffi!(str_arg(request_json));
    let response = try_ffi!(str_arg(response_json));
    let cert = try_ffi!(str_arg(service_cert_pem));
    let receipt = try_ffi!(Receipt::parse(receipt).map_err(fail_with));
    let request: Request = try_ffi!(serde_json::from_str(request).map_err(|e| fail(LskvStatus::Codec, e)));
    let response: Response = try_ffi!(serde_json::from_str(response).map_err(|e| fail(LskvStatus::Codec, e)));
    let cert = try_ffi!(Certificate::from_pem(cert).map_err(fail_with));
    match verify_intermediary(&request, &response, &receipt, &cert) {
        Ok(_) => LskvStatus::Ok,
        Err(report) => {
            let status = match report.stage.as_str() {
                "claims_mismatch" => LskvStatus::ClaimsMismatch,
                "txid_mismatch" => LskvStatus::TxIdMismatch,
                "untrusted_node" => LskvStatus::UntrustedNode,
                _ => LskvStatus::ProofOrSignatureInvalid,
            };
            fail(status, report)
        }
    }
}

/// Audit ledger bytes. `secret` is NULL for a structure-only audit or points
/// at the 32-byte ledger secret to also check encrypted contents.
///
/// # Safety
/// `data` must point to `len` readable bytes, `secret` to 32 bytes or NULL,
/// `service_cert_pem` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lskv_ledger_audit(
    data: *const u8,
    len: usize,
    service_cert_pem: *const c_char,
    secret: *const u8,
    out: *mut *mut LskvAudit,
) -> LskvStatus {
    if out.is_null() {
        return fail(LskvStatus::NullArgument, "null output pointer");
    }
    *out = ptr::null_mut();
    let data = try_ffi!(bytes_arg(data, len));
    let cert = try_ffi!(str_arg(service_cert_pem));
    let cert = try_ffi!(Certificate::from_pem(cert).map_err(fail_with));
    let secret: Option<[u8; 32]> = if secret.is_null() {
        None
    } else {
        let mut s = [0u8; 32];
        ptr::copy_nonoverlapping(secret, s.as_mut_ptr(), 32);
        Some(s)
    };
    match verify_ledger(data, &cert, secret.as_ref()) {
        Ok(report) => {
            *out = Box::into_raw(Box::new(LskvAudit { report }));
            LskvStatus::Ok
        }
        Err(e) => fail(LskvStatus::AuditFailed, e),
    }
}

/// # Safety
/// `audit` must be a live handle from [`lskv_ledger_audit`].
#[no_mangle]
pub unsafe extern "C" fn lskv_audit_transactions(audit: *const LskvAudit) -> u64 {
    audit.as_ref().map_or(0, |a| a.report.transactions as u64)
}

/// Last transaction covered by a signature entry.
///
/// # Safety
/// `audit` must be a live handle from [`lskv_ledger_audit`].
#[no_mangle]
pub unsafe extern "C" fn lskv_audit_covered(audit: *const LskvAudit) -> LskvTxId {
    audit.as_ref().map_or_else(LskvTxId::default, |a| a.report.covered.into())
}

/// Full report as JSON; free with [`lskv_string_free`].
///
/// # Safety
/// `audit` must be a live handle from [`lskv_ledger_audit`].
#[no_mangle]
pub unsafe extern "C" fn lskv_audit_to_json(audit: *const LskvAudit) -> *mut c_char {
    match audit.as_ref() {
        Some(a) => serde_json::to_string(&a.report).map_or(ptr::null_mut(), into_c_string),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `audit` must be NULL or a handle from [`lskv_ledger_audit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lskv_audit_free(audit: *mut LskvAudit) {
    if !audit.is_null() {
        drop(Box::from_raw(audit));
    }
}

/// Connect lazily to the node at `url`. `token` may be NULL.
///
/// # Safety
/// `url` must be a NUL-terminated string, `token` NULL or one, and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lskv_client_new(url: *const c_char, token: *const c_char, out: *mut *mut LskvClient) -> LskvStatus {
    if out.is_null() {
        return fail(LskvStatus::NullArgument, "null output pointer");
    }
    *out = ptr::null_mut();
    let url = try_ffi!(str_arg(url));
    let token = if token.is_null() {
        None
    } else {
        Some(try_ffi!(str_arg(token)))
    };
    let rt = try_ffi!(tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| fail(LskvStatus::Internal, e)));
    let mut client = try_ffi!(Client::new(url).map_err(fail_with));
    if let Some(t) = token {
        client = client.with_token(t);
    }
    *out = Box::into_raw(Box::new(LskvClient { rt, client }));
    LskvStatus::Ok
}

/// # Safety
/// `client` must be NULL or a handle from [`lskv_client_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lskv_client_free(client: *mut LskvClient) {
    if !client.is_null() {
        drop(Box::from_raw(client));
    }
}

unsafe fn client_ref<'a>(c: *const LskvClient) -> Result<&'a LskvClient, LskvStatus> {
    c.as_ref().ok_or_else(|| fail(LskvStatus::NullArgument, "null client"))
}

/// Store `value` under `key`. On success `out_txid` (if not NULL) receives
/// the transaction ID to wait on or fetch a receipt for.
///
/// # Safety
/// `client` must be live, `key`/`value` must point to the given number of
/// bytes and `out_txid` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn lskv_client_put(
    client: *const LskvClient,
    key: *const u8,
    key_len: usize,
    value: *const u8,
    value_len: usize,
    out_txid: *mut LskvTxId,
) -> LskvStatus {
    let c = try_ffi!(client_ref(client));
    let key = try_ffi!(bytes_arg(key, key_len));
    let value = try_ffi!(bytes_arg(value, value_len));
    let resp = try_ffi!(c.rt.block_on(c.client.put(key, value)).map_err(fail_with));
    if let Some(o) = out_txid.as_mut() {
        *o = LskvTxId { term: resp.header.raft_term, revision: resp.header.revision };
    }
    LskvStatus::Ok
}

/// Read the latest value of `key`. Returns [`LskvStatus::NotFound`] when
/// the key does not exist. The buffer is freed with [`lskv_bytes_free`].
///
/// # Safety
/// `client` must be live, `key` must point to `key_len` bytes and both
/// output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn lskv_client_get(
    client: *const LskvClient,
    key: *const u8,
    key_len: usize,
    out_value: *mut *mut u8,
    out_len: *mut usize,
) -> LskvStatus {
    if out_value.is_null() || out_len.is_null() {
        return fail(LskvStatus::NullArgument, "null output pointer");
    }
    *out_value = ptr::null_mut();
    *out_len = 0;
    let c = try_ffi!(client_ref(client));
    let key = try_ffi!(bytes_arg(key, key_len));
    match try_ffi!(c.rt.block_on(c.client.get(key)).map_err(fail_with)) {
        Some(kv) => {
            let buf = kv.value.into_boxed_slice();
            *out_len = buf.len();
            *out_value = Box::into_raw(buf) as *mut u8;
            LskvStatus::Ok
        }
        None => fail(LskvStatus::NotFound, "key not found"),
    }
}

/// Delete `key`; `out_deleted` (if not NULL) receives the number of keys removed.
///
/// # Safety
/// `client` must be live, `key` must point to `key_len` bytes and
/// `out_deleted` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn lskv_client_delete(
    client: *const LskvClient,
    key: *const u8,
    key_len: usize,
    out_deleted: *mut i64,
) -> LskvStatus {
    let c = try_ffi!(client_ref(client));
    let key = try_ffi!(bytes_arg(key, key_len));
    let resp = try_ffi!(c
        .rt
        .block_on(c.client.delete_range(DeleteRangeRequest::key(key.to_vec())))
        .map_err(fail_with));
    if let Some(o) = out_deleted.as_mut() {
        *o = resp.deleted;
    }
    LskvStatus::Ok
}

/// # Safety
/// `client` must be live and `out_status` writable.
#[no_mangle]
pub unsafe extern "C" fn lskv_client_tx_status(
    client: *const LskvClient,
    txid: LskvTxId,
    out_status: *mut LskvTxStatus,
) -> LskvStatus {
    if out_status.is_null() {
        return fail(LskvStatus::NullArgument, "null output pointer");
    }
    let c = try_ffi!(client_ref(client));
    let resp = try_ffi!(c.rt.block_on(c.client.tx_status(txid.into())).map_err(fail_with));
    *out_status = resp.status.into();
    LskvStatus::Ok
}

/// Fetch the receipt for a committed transaction as JSON; free with
/// [`lskv_string_free`].
///
/// # Safety
/// `client` must be live and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn lskv_client_receipt(
    client: *const LskvClient,
    txid: LskvTxId,
    out_json: *mut *mut c_char,
) -> LskvStatus {
    if out_json.is_null() {
        return fail(LskvStatus::NullArgument, "null output pointer");
    }
    *out_json = ptr::null_mut();
    let c = try_ffi!(client_ref(client));
    let receipt = try_ffi!(c.rt.block_on(c.client.receipt(txid.into())).map_err(fail_with));
    *out_json = into_c_string(receipt.to_json());
    LskvStatus::Ok
}
