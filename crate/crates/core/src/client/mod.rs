//! HTTP client for the JSON gateway, commit waiting and receipt checks.

mod commit;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use crate::replication::{classify_local, LocalStatus, TermHistory, TxStatus};
pub use commit::{wait_for_commit, CommitApi, CommitStrategy, HttpCommitApi, SimCommitApi, WaitOutcome};

use crate::api::{NodeInfo, SESSION_HEADER};
use crate::crypto::{Certificate, NodeKeys};
use crate::error::{Error, Result};
use crate::proto::*;
use crate::receipt::{verify_receipt, Receipt, Verified, VerifyError};
use crate::types::TxId;

#[derive(Default)]
struct Shared {
    /// Header with the highest committed revision seen on any response.
    last_header: Option<ResponseHeader>,
    /// Last transaction acknowledged to this client, when sessions are on.
    session: Option<TxId>,
}

/// Client bound to one node. Clones share the connection pool, the header
/// feed and the session.
#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    token: Option<String>,
    use_session: bool,
    shared: Arc<Mutex<Shared>>,
}

impl Client {
    pub fn new(url: impl Into<String>) -> Result<Self> {
        let http = reqwest::Client::builder()
            .pool_max_idle_per_host(256)
            .tcp_nodelay(true)
            .connect_timeout(Duration::from_secs(5))
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(Client {
            http,
            base: url.into().trim_end_matches('/').to_string(),
            token: None,
            use_session: false,
            shared: Arc::default(),
        })
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    /// Make later reads wait until this node has the client's own writes.
    pub fn with_session(mut self) -> Self {
        self.use_session = true;
        self
    }

    /// Same pool and settings, pointed at another node.
    pub fn at(&self, url: impl Into<String>) -> Self {
        Client {
            base: url.into().trim_end_matches('/').to_string(),
            ..self.clone()
        }
    }

    pub fn url(&self) -> &str {
        &self.base
    }

    /// Most advanced response header seen so far.
    pub fn last_header(&self) -> Option<ResponseHeader> {
        self.shared.lock().expect("client state lock").last_header.clone()
    }

    pub fn session(&self) -> Option<TxId> {
        self.shared.lock().expect("client state lock").session
    }

    fn observe(&self, h: &ResponseHeader, mutated: bool) {
        let mut s = self.shared.lock().expect("client state lock");
        let newer = s
            .last_header
            .as_ref()
            .is_none_or(|old| h.committed_revision >= old.committed_revision);
        if newer {
            s.last_header = Some(h.clone());
        }
        if mutated && self.use_session {
            let t = TxId::new(h.raft_term, h.revision);
            if s.session.is_none_or(|old| t.revision > old.revision) {
                s.session = Some(t);
            }
        }
    }

    async fn send(&self, rb: reqwest::RequestBuilder) -> Result<reqwest::Response> {
        let mut rb = rb;
        if let Some(t) = &self.token {
            rb = rb.bearer_auth(t);
        }
        if self.use_session {
            if let Some(s) = self.session() {
                rb = rb.header(SESSION_HEADER, s.to_string());
            }
        }
        let resp = rb
            .send()
            .await
            .map_err(|e| Error::Unavailable(format!("{}: {e}", self.base)))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => body.details,
            Err(_) => Error::Internal(format!("HTTP {status}: {text}")),
        })
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.send(self.http.post(format!("{}{path}", self.base)).json(body)).await?;
        let bytes = resp
            .bytes()
            .await
            .map_err(|e| Error::Unavailable(format!("{}: {e}", self.base)))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Run any store request and return the typed response.
    pub async fn execute(&self, req: &Request) -> Result<Response> {
        let (path, body) = match req {
            Request::Range(r) => ("/v3/kv/range", serde_json::to_value(r)?),
            Request::Put(r) => ("/v3/kv/put", serde_json::to_value(r)?),
            Request::DeleteRange(r) => ("/v3/kv/deleterange", serde_json::to_value(r)?),
            Request::Txn(r) => ("/v3/kv/txn", serde_json::to_value(r)?),
            Request::Compaction(r) => ("/v3/kv/compact", serde_json::to_value(r)?),
            Request::LeaseGrant(r) => ("/v3/lease/grant", serde_json::to_value(r)?),
            Request::LeaseRevoke(r) => ("/v3/lease/revoke", serde_json::to_value(r)?),
            Request::LeaseKeepAlive(r) => ("/v3/lease/keepalive", serde_json::to_value(r)?),
            Request::SetPublicPrefix(r) => ("/v3/gov/public_prefix", serde_json::to_value(r)?),
        };
        let value: serde_json::Value = self.post(path, &body).await?;
        let resp = Response::from_body(req, value)?;
        let h = resp.header();
        let mutated = (h.raft_term, h.revision) != (h.committed_raft_term, h.committed_revision);
        self.observe(h, mutated);
        Ok(resp)
    }

    pub async fn range(&self, req: RangeRequest) -> Result<RangeResponse> {
        match self.execute(&Request::Range(req)).await? {
            Response::Range(r) => Ok(r),
            _ => unreachable!("range request yields a range response"),
        }
    }

    pub async fn get(&self, key: impl Into<Vec<u8>>) -> Result<Option<KeyValue>> {
        Ok(self.range(RangeRequest::key(key)).await?.kvs.into_iter().next())
    }

    pub async fn put(&self, key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Result<PutResponse> {
        self.put_request(PutRequest::new(key, value)).await
    }

    pub async fn put_request(&self, req: PutRequest) -> Result<PutResponse> {
        match self.execute(&Request::Put(req)).await? {
            Response::Put(r) => Ok(r),
            _ => unreachable!("put request yields a put response"),
        }
    }

    pub async fn delete_range(&self, req: DeleteRangeRequest) -> Result<DeleteRangeResponse> {
        match self.execute(&Request::DeleteRange(req)).await? {
            Response::DeleteRange(r) => Ok(r),
            _ => unreachable!("delete request yields a delete response"),
        }
    }

    pub async fn txn(&self, req: TxnRequest) -> Result<TxnResponse> {
        match self.execute(&Request::Txn(req)).await? {
            Response::Txn(r) => Ok(r),
            _ => unreachable!("txn request yields a txn response"),
        }
    }

    pub async fn lease_grant(&self, ttl: i64) -> Result<LeaseGrantResponse> {
        match self.execute(&Request::LeaseGrant(LeaseGrantRequest { ttl, id: 0 })).await? {
            Response::LeaseGrant(r) => Ok(r),
            _ => unreachable!("lease grant yields a lease grant response"),
        }
    }

    pub async fn lease_revoke(&self, id: i64) -> Result<LeaseRevokeResponse> {
        match self.execute(&Request::LeaseRevoke(LeaseRevokeRequest { id })).await? {
            Response::LeaseRevoke(r) => Ok(r),
            _ => unreachable!("lease revoke yields a lease revoke response"),
        }
    }

    pub async fn lease_keepalive(&self, id: i64) -> Result<LeaseKeepAliveResponse> {
        match self.execute(&Request::LeaseKeepAlive(LeaseKeepAliveRequest { id })).await? {
            Response::LeaseKeepAlive(r) => Ok(r),
            _ => unreachable!("lease keepalive yields a lease keepalive response"),
        }
    }

    pub async fn set_public_prefix(&self, prefix: impl Into<Vec<u8>>, admin: &NodeKeys) -> Result<SetPublicPrefixResponse> {
        let req = Request::SetPublicPrefix(SetPublicPrefixRequest::signed(prefix, admin));
        match self.execute(&req).await? {
            Response::SetPublicPrefix(r) => Ok(r),
            _ => unreachable!("governance request yields a governance response"),
        }
    }

    pub async fn tx_status(&self, txid: TxId) -> Result<TxStatusResponse> {
        let r: TxStatusResponse = self.post("/v3/tx/status", &TxQuery::from(txid)).await?;
        self.observe(&r.header, false);
        Ok(r)
    }

    pub async fn committed(&self) -> Result<CommittedResponse> {
        let r: CommittedResponse = self.post("/v3/tx/committed", &serde_json::json!({})).await?;
        self.observe(&r.header, false);
        Ok(r)
    }

    pub async fn term_history(&self) -> Result<TermHistoryResponse> {
        let r: TermHistoryResponse = self.post("/v3/tx/term_history", &serde_json::json!({})).await?;
        self.observe(&r.header, false);
        Ok(r)
    }

    pub async fn receipt(&self, txid: TxId) -> Result<Receipt> {
        let r: ReceiptResponse = self.post("/v3/receipt/get", &TxQuery::from(txid)).await?;
        self.observe(&r.header, false);
        Ok(r.receipt)
    }

    pub async fn info(&self) -> Result<NodeInfo> {
        let resp = self.send(self.http.get(format!("{}/node/info", self.base))).await?;
        resp.json()
            .await
            .map_err(|e| Error::Codec(format!("node info: {e}")))
    }

    pub async fn watch(&self, req: &WatchCreateRequest) -> Result<WatchStream> {
        let resp = self
            .send(self.http.post(format!("{}/v3/watch", self.base)).json(req))
            .await?;
        let mut w = WatchStream {
            resp,
            buf: Vec::new(),
            id: 0,
        };
        match w.next().await? {
            Some(first) if first.created => {
                w.id = first.watch_id;
                Ok(w)
            }
            _ => Err(Error::Internal("watch stream did not start with a created message".into())),
        }
    }

    pub async fn watch_cancel(&self, id: i64) -> Result<()> {
        let _: WatchResponse = self.post("/v3/watch/cancel", &WatchCancelRequest { watch_id: id }).await?;
        Ok(())
    }
}

/// Newline-delimited watch responses from one stream.
pub struct WatchStream {
    resp: reqwest::Response,
    buf: Vec<u8>,
    id: i64,
}

#[derive(Deserialize)]
struct WatchLine {
    result: WatchResponse,
}

impl WatchStream {
    pub fn id(&self) -> i64 {
        self.id
    }

    /// Next message, or `None` when the server closed the stream.
    pub async fn next(&mut self) -> Result<Option<WatchResponse>> {
        loop {
            if let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = self.buf.drain(..=pos).collect();
                let parsed: WatchLine = serde_json::from_slice(&line)?;
                return Ok(Some(parsed.result));
            }
            match self.resp.chunk().await {
                Ok(Some(chunk)) => self.buf.extend_from_slice(&chunk),
                Ok(None) => return Ok(None),
                Err(e) => return Err(Error::Unavailable(format!("watch stream: {e}"))),
            }
        }
    }
}

/// Why a receipt did not vouch for the request and response the client holds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub stage: String,
    pub message: String,
}

impl From<VerifyError> for MismatchReport {
    fn from(e: VerifyError) -> Self {
        MismatchReport {
            stage: e.stage().to_string(),
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for MismatchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

/// Check that whoever relayed `request` and `response` did so faithfully.
pub fn verify_intermediary(
    request: &Request,
    response: &Response,
    receipt: &Receipt,
    service_cert: &Certificate,
) -> std::result::Result<Verified, MismatchReport> {
    verify_receipt(receipt, service_cert, request, response).map_err(MismatchReport::from)
}
