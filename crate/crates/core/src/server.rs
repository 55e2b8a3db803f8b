//! HTTP surface over a [`Runtime`]. Bodies are record-lines except for
//! `/apply`, which takes YAML config documents.

use std::collections::HashMap;

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::stream;

use crate::record::{parse_lines, parse_text, to_lines, Record, Value};
use crate::runtime::{RuntimeError, ANONYMOUS, POLL};
use crate::runtime::Runtime;

pub const ROLE_HEADER: &str = "x-role";
/// Response header carrying the number of view records a query read.
pub const SCANNED_HEADER: &str = "x-scanned";

fn lines(status: StatusCode, records: &[Record]) -> Response {
    (
        status,
        [("content-type", "application/x-record-lines")],
        to_lines(records),
    )
        .into_response()
}

fn error(status: u16, msg: impl std::fmt::Display) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    lines(status, &[Record::of([("error", Value::str(msg.to_string()))])])
}

impl IntoResponse for RuntimeError {
    fn into_response(self) -> Response {
        error(self.status(), &self)
    }
}

fn role(headers: &HeaderMap) -> String {
    headers
        .get(ROLE_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .unwrap_or(ANONYMOUS)
        .to_string()
}

fn param<'a>(q: &'a HashMap<String, String>, key: &str) -> Result<&'a str, Response> {
    q.get(key)
        .map(String::as_str)
        .ok_or_else(|| error(400, format!("missing query parameter {key:?}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("runtime task panicked")
}

fn strs(v: Vec<String>) -> Value {
    Value::Array(v.into_iter().map(Value::Str).collect())
}

/// `{child:"..",parent:".."}` as a record-line or JSON object.
fn pair(body: &[u8]) -> Result<(String, String), Response> {
    let text = std::str::from_utf8(body).map_err(|_| error(400, "body is not UTF-8"))?;
    let get = |r: &Record, k: &str| r.get(k).and_then(Value::as_str).map(str::to_string);
    if let Ok(r) = parse_text(text.trim()) {
        if let (Some(c), Some(p)) = (get(&r, "child"), get(&r, "parent")) {
            return Ok((c, p));
        }
    }
    let v: serde_json::Value = serde_json::from_str(text).map_err(|_| error(400, "expected {child, parent}"))?;
    match (v["child"].as_str(), v["parent"].as_str()) {
        (Some(c), Some(p)) => Ok((c.to_string(), p.to_string())),
        _ => Err(error(400, "expected {child, parent}")),
    }
}

async fn compose(rt: Runtime, body: Bytes, join: bool) -> Response {
    let (child, parent) = match pair(&body) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let res = blocking(move || if join { rt.join(&child, &parent) } else { rt.leave(&child, &parent) }).await;
    match res {
        Ok(changed) => {
            let changed = changed.into_iter().map(|(c, i)| format!("{c}/{i}")).collect();
            lines(StatusCode::OK, &[Record::of([("changed", strs(changed))])])
        }
        Err(e) => e.into_response(),
    }
}

async fn join(State(rt): State<Runtime>, body: Bytes) -> Response {
    compose(rt, body, true).await
}

async fn leave(State(rt): State<Runtime>, body: Bytes) -> Response {
    compose(rt, body, false).await
}

async fn query(State(rt): State<Runtime>, headers: HeaderMap, Query(q): Query<HashMap<String, String>>) -> Response {
    let (target, pipeline) = match (param(&q, "target"), param(&q, "q")) {
        (Ok(t), Ok(p)) => (t.to_string(), p.to_string()),
        (Err(r), _) | (_, Err(r)) => return r,
    };
    let role = role(&headers);
    match blocking(move || rt.query(&target, &pipeline, &role)).await {
        Ok(a) => {
            let mut resp = lines(StatusCode::OK, &a.records);
            resp.headers_mut().insert(SCANNED_HEADER, a.scanned.into());
            resp
        }
        Err(e) => e.into_response(),
    }
}

async fn load(State(rt): State<Runtime>, Query(q): Query<HashMap<String, String>>, body: Bytes) -> Response {
    let ctx = match param(&q, "ctx") {
        Ok(c) => c.to_string(),
        Err(r) => return r,
    };
    let Ok(text) = String::from_utf8(body.to_vec()) else {
        return error(400, "body is not UTF-8");
    };
    let records = match parse_lines(&text) {
        Ok(r) => r,
        Err(e) => return error(400, e),
    };
    let n = records.len();
    match blocking(move || rt.load(&ctx, records)).await {
        Ok(id) => lines(
            StatusCode::OK,
            &[Record::of([("commit", Value::Int(id as i64)), ("records", Value::Int(n as i64))])],
        ),
        Err(e) => e.into_response(),
    }
}

/// Streams view commits as record-lines until the client goes away, or
/// until `limit` records were sent.
async fn watch(State(rt): State<Runtime>, headers: HeaderMap, Query(q): Query<HashMap<String, String>>) -> Response {
    let target = match param(&q, "target") {
        Ok(t) => t.to_string(),
        Err(r) => return r,
    };
    let limit = match q.get("limit").map(|s| s.parse::<usize>()) {
        None => None,
        Some(Ok(n)) => Some(n),
        Some(Err(_)) => return error(400, "limit must be a number"),
    };
    let role = role(&headers);
    let watcher = match blocking(move || rt.watch(&target, &role)).await {
        Ok(w) => w,
        Err(e) => return e.into_response(),
    };
    let (tx, rx) = tokio::sync::mpsc::channel::<String>(16);
    std::thread::spawn(move || {
        let mut watcher = watcher;
        let mut sent = 0usize;
        loop {
            if limit.is_some_and(|l| sent >= l) || tx.is_closed() {
                return;
            }
            let commits = match watcher.next_batch(POLL) {
                Ok(c) => c,
                Err(_) => return,
            };
            for c in commits {
                let mut recs = c.records.to_vec();
                if let Some(l) = limit {
                    recs.truncate(l - sent);
                }
                sent += recs.len();
                if tx.blocking_send(to_lines(&recs)).is_err() {
                    return;
                }
                if limit.is_some_and(|l| sent >= l) {
                    return;
                }
            }
        }
    });
    let body = stream::unfold(rx, |mut rx| async move {
        rx.recv().await.map(|chunk| (Ok::<_, std::io::Error>(Bytes::from(chunk)), rx))
    });
    Response::builder()
        .header("content-type", "application/x-record-lines")
        .body(Body::from_stream(body))
        .expect("valid response")
}

async fn contexts(State(rt): State<Runtime>) -> Response {
    let recs = blocking(move || rt.contexts()).await;
    lines(StatusCode::OK, &recs)
}

async fn apply(State(rt): State<Runtime>, body: Bytes) -> Response {
    let Ok(text) = String::from_utf8(body.to_vec()) else {
        return error(400, "body is not UTF-8");
    };
    let rep = blocking(move || rt.apply(&text)).await;
    let errors = rep
        .errors
        .iter()
        .map(|(i, e)| format!("document {i}: {e}"))
        .collect::<Vec<_>>();
    let status = if errors.is_empty() {
        StatusCode::OK
    } else {
        StatusCode::BAD_REQUEST
    };
    lines(
        status,
        &[Record::of([
            ("applied", strs(rep.applied)),
            ("unchanged", strs(rep.unchanged)),
            ("errors", strs(errors)),
        ])],
    )
}

pub fn router(rt: Runtime) -> Router {
    Router::new()
        .route("/join", post(join))
        .route("/leave", post(leave))
        .route("/query", get(query))
        .route("/load", post(load))
        .route("/watch", get(watch))
        .route("/contexts", get(contexts))
        .route("/apply", post(apply))
        .with_state(rt)
}

/// Serves until the process is stopped. Starts pipelet workers first.
pub async fn serve(rt: Runtime, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    rt.start();
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(rt)).await
}
