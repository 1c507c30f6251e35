//! Client-facing request and response types.
//!
//! Shapes follow the etcd v3 JSON gateway: byte fields are base64 strings,
//! requests and responses are tagged by their RPC name. The same types are
//! used to compute claims digests, so defaults are explicit and unknown
//! fields are ignored on input.

use serde::{Deserialize, Serialize};

use crate::kv::StoredValue;
use crate::index::Event;
use crate::receipt::Receipt;
use crate::replication::TxStatus;
use crate::types::{b64, LeaseId, Revision, Term, TxId};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub cluster_id: String,
    pub member_id: String,
    pub raft_term: Term,
    pub revision: Revision,
    pub committed_raft_term: Term,
    pub committed_revision: Revision,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyValue {
    #[serde(with = "b64")]
    pub key: Vec<u8>,
    pub create_revision: Revision,
    pub mod_revision: Revision,
    pub version: i64,
    #[serde(with = "b64")]
    pub value: Vec<u8>,
    pub lease: LeaseId,
}

impl KeyValue {
    pub fn from_stored(key: &[u8], v: &StoredValue) -> Self {
        KeyValue {
            key: key.to_vec(),
            create_revision: v.create_revision,
            mod_revision: v.mod_revision,
            version: v.version,
            value: v.data.clone(),
            lease: v.lease,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeRequest {
    #[serde(with = "b64")]
    pub key: Vec<u8>,
    #[serde(default, with = "b64::option", skip_serializing_if = "Option::is_none")]
    pub range_end: Option<Vec<u8>>,
    #[serde(default)]
    pub limit: i64,
    /// 0 reads the latest (optimistic) state; otherwise a committed historical read.
    #[serde(default)]
    pub revision: Revision,
    #[serde(default)]
    pub count_only: bool,
}

impl RangeRequest {
    pub fn key(key: impl Into<Vec<u8>>) -> Self {
        RangeRequest {
            key: key.into(),
            ..Default::default()
        }
    }

    pub fn prefix_from(start: impl Into<Vec<u8>>) -> Self {
        RangeRequest {
            key: start.into(),
            range_end: Some(vec![0]),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(default)]
    pub kvs: Vec<KeyValue>,
    #[serde(default)]
    pub more: bool,
    #[serde(default)]
    pub count: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutRequest {
    #[serde(with = "b64")]
    pub key: Vec<u8>,
    #[serde(with = "b64")]
    pub value: Vec<u8>,
    #[serde(default)]
    pub lease: LeaseId,
    #[serde(default)]
    pub prev_kv: bool,
}

impl PutRequest {
    pub fn new(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        PutRequest {
            key: key.into(),
            value: value.into(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prev_kv: Option<KeyValue>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteRangeRequest {
    #[serde(with = "b64")]
    pub key: Vec<u8>,
    #[serde(default, with = "b64::option", skip_serializing_if = "Option::is_none")]
    pub range_end: Option<Vec<u8>>,
    #[serde(default)]
    pub prev_kv: bool,
}

impl DeleteRangeRequest {
    pub fn key(key: impl Into<Vec<u8>>) -> Self {
        DeleteRangeRequest {
            key: key.into(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteRangeResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(default)]
    pub deleted: i64,
    #[serde(default)]
    pub prev_kvs: Vec<KeyValue>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompareResult {
    Equal,
    Greater,
    Less,
    NotEqual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompareTarget {
    Version,
    Create,
    Mod,
    Value,
}

/// A predicate over a single key. Exactly the field matching `target` must be set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compare {
    pub result: CompareResult,
    pub target: CompareTarget,
    #[serde(with = "b64")]
    pub key: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub create_revision: Option<Revision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mod_revision: Option<Revision>,
    #[serde(default, with = "b64::option", skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<u8>>,
}

impl Compare {
    pub fn value(key: impl Into<Vec<u8>>, result: CompareResult, value: impl Into<Vec<u8>>) -> Self {
        Compare {
            result,
            target: CompareTarget::Value,
            key: key.into(),
            version: None,
            create_revision: None,
            mod_revision: None,
            value: Some(value.into()),
        }
    }

    pub fn version(key: impl Into<Vec<u8>>, result: CompareResult, version: i64) -> Self {
        Compare {
            result,
            target: CompareTarget::Version,
            key: key.into(),
            version: Some(version),
            create_revision: None,
            mod_revision: None,
            value: None,
        }
    }

    pub fn mod_revision(key: impl Into<Vec<u8>>, result: CompareResult, rev: Revision) -> Self {
        Compare {
            result,
            target: CompareTarget::Mod,
            key: key.into(),
            version: None,
            create_revision: None,
            mod_revision: Some(rev),
            value: None,
        }
    }

    pub fn create_revision(key: impl Into<Vec<u8>>, result: CompareResult, rev: Revision) -> Self {
        Compare {
            result,
            target: CompareTarget::Create,
            key: key.into(),
            version: None,
            create_revision: Some(rev),
            mod_revision: None,
            value: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestOp {
    RequestRange(RangeRequest),
    RequestPut(PutRequest),
    RequestDeleteRange(DeleteRangeRequest),
    RequestTxn(TxnRequest),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseOp {
    ResponseRange(RangeResponse),
    ResponsePut(PutResponse),
    ResponseDeleteRange(DeleteRangeResponse),
    ResponseTxn(TxnResponse),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnRequest {
    #[serde(default)]
    pub compare: Vec<Compare>,
    #[serde(default)]
    pub success: Vec<RequestOp>,
    #[serde(default)]
    pub failure: Vec<RequestOp>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(default)]
    pub succeeded: bool,
    #[serde(default)]
    pub responses: Vec<ResponseOp>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionRequest {
    pub revision: Revision,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    /// Keys hard-deleted because their lease had expired.
    #[serde(default)]
    pub deleted: i64,
    #[serde(default)]
    pub reaped_leases: Vec<LeaseId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseGrantRequest {
    #[serde(rename = "TTL", alias = "ttl")]
    pub ttl: i64,
    #[serde(default, rename = "ID", alias = "id")]
    pub id: LeaseId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseGrantResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(rename = "ID")]
    pub id: LeaseId,
    #[serde(rename = "TTL")]
    pub ttl: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseRevokeRequest {
    #[serde(rename = "ID", alias = "id")]
    pub id: LeaseId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseRevokeResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(default)]
    pub deleted: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseKeepAliveRequest {
    #[serde(rename = "ID", alias = "id")]
    pub id: LeaseId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseKeepAliveResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(rename = "ID")]
    pub id: LeaseId,
    #[serde(rename = "TTL")]
    pub ttl: i64,
}

/// Governance request: make new writes under `prefix` readable in the ledger.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetPublicPrefixRequest {
    #[serde(with = "b64")]
    pub prefix: Vec<u8>,
    /// PEM certificate of the admin issuing the request.
    pub admin_cert: String,
    /// Admin signature over [`governance_message`], hex encoded.
    pub signature: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetPublicPrefixResponse {
    #[serde(default)]
    pub header: ResponseHeader,
    #[serde(default)]
    pub prefixes: Vec<String>,
}

impl SetPublicPrefixRequest {
    /// Build a request signed by `admin`.
    pub fn signed(prefix: impl Into<Vec<u8>>, admin: &crate::crypto::NodeKeys) -> Self {
        let prefix = prefix.into();
        let signature = hex::encode(admin.key.sign(&governance_message(&prefix)));
        SetPublicPrefixRequest {
            prefix,
            admin_cert: admin.cert.to_pem(),
            signature,
        }
    }
}

/// Bytes an admin signs to register a public prefix.
pub fn governance_message(prefix: &[u8]) -> Vec<u8> {
    let mut m = b"lskv-governance-v1\0set_public_prefix\0".to_vec();
    m.extend_from_slice(prefix);
    m
}

/// Any request the store executes through the state machine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    Range(RangeRequest),
    Put(PutRequest),
    DeleteRange(DeleteRangeRequest),
    Txn(TxnRequest),
    Compaction(CompactionRequest),
    LeaseGrant(LeaseGrantRequest),
    LeaseRevoke(LeaseRevokeRequest),
    LeaseKeepAlive(LeaseKeepAliveRequest),
    SetPublicPrefix(SetPublicPrefixRequest),
}

impl Request {
    /// Requests that can never mutate and are served by any node.
    pub fn is_read(&self) -> bool {
        matches!(self, Request::Range(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Request::Range(_) => "range",
            Request::Put(_) => "put",
            Request::DeleteRange(_) => "delete_range",
            Request::Txn(_) => "txn",
            Request::Compaction(_) => "compaction",
            Request::LeaseGrant(_) => "lease_grant",
            Request::LeaseRevoke(_) => "lease_revoke",
            Request::LeaseKeepAlive(_) => "lease_keep_alive",
            Request::SetPublicPrefix(_) => "set_public_prefix",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Range(RangeResponse),
    Put(PutResponse),
    DeleteRange(DeleteRangeResponse),
    Txn(TxnResponse),
    Compaction(CompactionResponse),
    LeaseGrant(LeaseGrantResponse),
    LeaseRevoke(LeaseRevokeResponse),
    LeaseKeepAlive(LeaseKeepAliveResponse),
    SetPublicPrefix(SetPublicPrefixResponse),
}

impl Response {
    pub fn header(&self) -> &ResponseHeader {
        match self {
            Response::Range(r) => &r.header,
            Response::Put(r) => &r.header,
            Response::DeleteRange(r) => &r.header,
            Response::Txn(r) => &r.header,
            Response::Compaction(r) => &r.header,
            Response::LeaseGrant(r) => &r.header,
            Response::LeaseRevoke(r) => &r.header,
            Response::LeaseKeepAlive(r) => &r.header,
            Response::SetPublicPrefix(r) => &r.header,
        }
    }

    pub fn header_mut(&mut self) -> &mut ResponseHeader {
        match self {
            Response::Range(r) => &mut r.header,
            Response::Put(r) => &mut r.header,
            Response::DeleteRange(r) => &mut r.header,
            Response::Txn(r) => &mut r.header,
            Response::Compaction(r) => &mut r.header,
            Response::LeaseGrant(r) => &mut r.header,
            Response::LeaseRevoke(r) => &mut r.header,
            Response::LeaseKeepAlive(r) => &mut r.header,
            Response::SetPublicPrefix(r) => &mut r.header,
        }
    }

    /// The inner response body as JSON, the shape returned by the HTTP gateway.
    pub fn body_json(&self) -> serde_json::Value {
        let v = serde_json::to_value(self).expect("response serializes");
        match v {
            serde_json::Value::Object(mut m) if m.len() == 1 => {
                let k = m.keys().next().cloned().expect("one key");
                m.remove(&k).expect("present")
            }
            other => other,
        }
    }

    /// Inverse of [`Response::body_json`], given the request that produced the body.
    pub fn from_body(request: &Request, body: serde_json::Value) -> serde_json::Result<Self> {
        use serde_json::from_value as v;
        Ok(match request {
            Request::Range(_) => Response::Range(v(body)?),
            Request::Put(_) => Response::Put(v(body)?),
            Request::DeleteRange(_) => Response::DeleteRange(v(body)?),
            Request::Txn(_) => Response::Txn(v(body)?),
            Request::Compaction(_) => Response::Compaction(v(body)?),
            Request::LeaseGrant(_) => Response::LeaseGrant(v(body)?),
            Request::LeaseRevoke(_) => Response::LeaseRevoke(v(body)?),
            Request::LeaseKeepAlive(_) => Response::LeaseKeepAlive(v(body)?),
            Request::SetPublicPrefix(_) => Response::SetPublicPrefix(v(body)?),
        })
    }
}

/// Names a transaction in status and receipt queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxQuery {
    #[serde(default)]
    pub raft_term: Term,
    #[serde(default)]
    pub revision: Revision,
}

impl From<TxId> for TxQuery {
    fn from(t: TxId) -> Self {
        TxQuery {
            raft_term: t.term,
            revision: t.revision,
        }
    }
}

impl From<TxQuery> for TxId {
    fn from(q: TxQuery) -> Self {
        TxId::new(q.raft_term, q.revision)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxStatusResponse {
    pub header: ResponseHeader,
    pub status: TxStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommittedResponse {
    pub header: ResponseHeader,
    pub raft_term: Term,
    pub revision: Revision,
}

/// First transaction of each term, ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermHistoryResponse {
    pub header: ResponseHeader,
    pub terms: Vec<TxId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptResponse {
    pub header: ResponseHeader,
    pub receipt: Receipt,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchCreateRequest {
    #[serde(with = "b64")]
    pub key: Vec<u8>,
    #[serde(default, with = "b64::option", skip_serializing_if = "Option::is_none")]
    pub range_end: Option<Vec<u8>>,
    /// 0 watches from the current head onward.
    #[serde(default)]
    pub start_revision: Revision,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchCancelRequest {
    pub watch_id: i64,
}

/// One line of a watch stream.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchResponse {
    pub header: ResponseHeader,
    pub watch_id: i64,
    #[serde(default)]
    pub created: bool,
    #[serde(default)]
    pub canceled: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub cancel_reason: String,
    #[serde(default)]
    pub events: Vec<Event>,
}

/// Body of every error response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
    pub details: crate::Error,
}

impl From<&crate::Error> for ErrorBody {
    fn from(e: &crate::Error) -> Self {
        ErrorBody {
            error: e.to_string(),
            code: e.code().into(),
            details: e.clone(),
        }
    }
}
