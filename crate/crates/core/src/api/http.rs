//! JSON gateway on etcd-style paths.
//!
//! Every endpoint takes a JSON body via POST. Bodies are parsed by hand so
//! that malformed input maps to a 400 with the usual error body rather than
//! the framework's plain-text rejection.

use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Request as HttpRequest, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::runtime::NodeHandle;
use crate::error::{Error, Result};
use crate::kv::KeyRange;
use crate::proto::*;
use crate::types::TxId;
use crate::watch::{WatchId, WatchState};

/// Request header carrying the last transaction a client session saw, as `term.revision`.
pub const SESSION_HEADER: &str = "x-lskv-session";

const WATCH_HEARTBEAT: Duration = Duration::from_secs(1);

#[derive(Clone)]
pub struct AppState {
    pub node: NodeHandle,
    pub auth_token: Option<String>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v3/kv/range", post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::Range)))
        .route("/v3/kv/put", post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::Put)))
        .route(
            "/v3/kv/deleterange",
            post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::DeleteRange)),
        )
        .route("/v3/kv/txn", post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::Txn)))
        .route(
            "/v3/kv/compact",
            post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::Compaction)),
        )
        .route(
            "/v3/lease/grant",
            post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::LeaseGrant)),
        )
        .route(
            "/v3/lease/revoke",
            post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::LeaseRevoke)),
        )
        .route(
            "/v3/lease/keepalive",
            post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::LeaseKeepAlive)),
        )
        .route(
            "/v3/gov/public_prefix",
            post(|s: State<AppState>, h: HeaderMap, b: Bytes| kv(s, h, b, Request::SetPublicPrefix)),
        )
        .route("/v3/tx/status", post(tx_status))
        .route("/v3/tx/committed", post(committed))
        .route("/v3/tx/term_history", post(term_history))
        .route("/v3/receipt/get", post(receipt))
        .route("/v3/watch", post(watch))
        .route("/v3/watch/cancel", post(watch_cancel))
        .route("/node/info", get(info))
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .with_state(state)
}

fn error_response(e: &Error) -> HttpResponse {
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(ErrorBody::from(e))).into_response()
}

fn reply<T: Serialize>(r: Result<T>) -> HttpResponse {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => error_response(&e),
    }
}

async fn authorize(State(s): State<AppState>, req: HttpRequest, next: Next) -> HttpResponse {
    if let Some(token) = &s.auth_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            let e = Error::Forbidden("missing or wrong bearer token".into());
            let mut resp = error_response(&e);
            *resp.status_mut() = StatusCode::UNAUTHORIZED;
            return resp;
        }
    }
    next.run(req).await
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| Error::InvalidArgument(format!("malformed request body: {e}")))
}

fn session(headers: &HeaderMap) -> Result<Option<TxId>> {
    match headers.get(SESSION_HEADER) {
        None => Ok(None),
        Some(v) => {
            let s = v
                .to_str()
                .map_err(|_| Error::InvalidArgument(format!("{SESSION_HEADER} is not text")))?;
            s.parse()
                .map(Some)
                .map_err(|e| Error::InvalidArgument(format!("{SESSION_HEADER}: {e}")))
        }
    }
}

async fn kv<T: DeserializeOwned>(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
    wrap: fn(T) -> Request,
) -> HttpResponse {
    let run = async {
        let req = wrap(parse(&body)?);
        let session = session(&headers)?;
        s.node.request(req, session).await
    };
    reply(run.await.map(|h| h.response.body_json()))
}

async fn tx_status(State(s): State<AppState>, body: Bytes) -> HttpResponse {
    let run = async {
        let q: TxQuery = parse(&body)?;
        let (status, header) = s.node.tx_status(q.into()).await?;
        Ok(TxStatusResponse { header, status })
    };
    reply(run.await)
}

async fn committed(State(s): State<AppState>) -> HttpResponse {
    let run = async {
        let header = s.node.committed().await?;
        Ok(CommittedResponse {
            raft_term: header.committed_raft_term,
            revision: header.committed_revision,
            header,
        })
    };
    reply(run.await)
}

async fn term_history(State(s): State<AppState>) -> HttpResponse {
    let run = async {
        let (h, header) = s.node.term_history().await?;
        Ok(TermHistoryResponse { header, terms: h.terms })
    };
    reply(run.await)
}

async fn receipt(State(s): State<AppState>, body: Bytes) -> HttpResponse {
    let run = async {
        let q: TxQuery = parse(&body)?;
        let (receipt, header) = s.node.receipt(q.into()).await?;
        Ok(ReceiptResponse { header, receipt })
    };
    reply(run.await)
}

async fn watch_cancel(State(s): State<AppState>, body: Bytes) -> HttpResponse {
    let run = async {
        let q: WatchCancelRequest = parse(&body)?;
        s.node.watch_cancel(q.watch_id);
        let header = s.node.committed().await?;
        Ok(WatchResponse {
            header,
            watch_id: q.watch_id,
            canceled: true,
            ..Default::default()
        })
    };
    reply(run.await)
}

async fn info(State(s): State<AppState>) -> HttpResponse {
    reply(s.node.info().await)
}

/// Cancels the watch when the response stream is dropped.
struct CancelOnDrop {
    node: NodeHandle,
    id: WatchId,
}

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.node.watch_cancel(self.id);
    }
}

struct WatchStream {
    guard: CancelOnDrop,
    pending: Option<WatchResponse>,
    done: bool,
}

fn line(r: &WatchResponse) -> Bytes {
    let mut v = serde_json::to_vec(&serde_json::json!({ "result": r })).expect("watch response serializes");
    v.push(b'\n');
    Bytes::from(v)
}

impl WatchStream {
    async fn next_line(&mut self) -> Option<Bytes> {
        if let Some(first) = self.pending.take() {
            return Some(line(&first));
        }
        if self.done {
            return None;
        }
        let node = &self.guard.node;
        let id = self.guard.id;
        loop {
            let seen = node.index_head();
            let (events, state, header) = match node.watch_poll(id).await {
                Ok(x) => x,
                Err(e) => {
                    self.done = true;
                    return Some(line(&WatchResponse {
                        watch_id: id,
                        canceled: true,
                        cancel_reason: e.to_string(),
                        ..Default::default()
                    }));
                }
            };
            if let WatchState::Cancelled { reason } = state {
                self.done = true;
                return Some(line(&WatchResponse {
                    header,
                    watch_id: id,
                    canceled: true,
                    cancel_reason: reason.map(|e| e.to_string()).unwrap_or_default(),
                    events,
                    ..Default::default()
                }));
            }
            if !events.is_empty() {
                return Some(line(&WatchResponse {
                    header,
                    watch_id: id,
                    events,
                    ..Default::default()
                }));
            }
            match tokio::time::timeout(WATCH_HEARTBEAT, node.index_advanced(seen)).await {
                Ok(Ok(_)) => continue,
                Ok(Err(_)) => {
                    self.done = true;
                    return None;
                }
                // An empty progress line lets a closed connection surface.
                Err(_) => {
                    return Some(line(&WatchResponse {
                        header,
                        watch_id: id,
                        ..Default::default()
                    }))
                }
            }
        }
    }
}

async fn watch(State(s): State<AppState>, body: Bytes) -> HttpResponse {
    let created = async {
        let q: WatchCreateRequest = parse(&body)?;
        let range = KeyRange::new(&q.key, q.range_end.as_deref())?;
        let start = (q.start_revision > 0).then_some(q.start_revision);
        s.node.watch_create(range, start).await
    };
    let (id, header) = match created.await {
        Ok(x) => x,
        Err(e) => return error_response(&e),
    };
    let stream = WatchStream {
        guard: CancelOnDrop {
            node: s.node.clone(),
            id,
        },
        pending: Some(WatchResponse {
            header,
            watch_id: id,
            created: true,
            ..Default::default()
        }),
        done: false,
    };
    let body = futures::stream::unfold(stream, |mut st| async move {
        st.next_line().await.map(|l| (Ok::<_, std::convert::Infallible>(l), st))
    });
    HttpResponse::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(body))
        .expect("static response parts are valid")
}
