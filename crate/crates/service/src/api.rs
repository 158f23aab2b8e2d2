//! HTTP routes. Every response body is an envelope:
//! `{"api_version", "config_hash", "data"}` on success and
//! `{"api_version", "config_hash", "error": {"status", "message"}}` otherwise.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fbprop_core::eval::Mode;
use fbprop_core::graph::neighborhood;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::session::{NodeScore, Session, SessionError};

pub const API_VERSION: &str = "1";
/// Largest `hops` accepted by the neighborhood endpoint.
pub const MAX_NEIGHBORHOOD_HOPS: usize = 6;

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::ScoreOutOfRange(_) => StatusCode::BAD_REQUEST,
            SessionError::UnknownNode(_) | SessionError::UnknownCycle(_) => StatusCode::NOT_FOUND,
            SessionError::CycleNotReached { .. }
            | SessionError::OutOfOrder { .. }
            | SessionError::PropagationPending
            | SessionError::Busy
            | SessionError::Finished => StatusCode::CONFLICT,
            SessionError::Io(_) | SessionError::Replay { .. } | SessionError::Harness(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn reply<T: Serialize>(session: &Session, result: ApiResult<T>) -> Response {
    let hash = session.config_hash();
    match result {
        Ok(data) => Json(serde_json::json!({ "api_version": API_VERSION, "config_hash": hash, "data": data }))
            .into_response(),
        Err(e) => {
            if e.status.is_server_error() {
                log::error!("{}", e.message);
            }
            let body = serde_json::json!({
                "api_version": API_VERSION,
                "config_hash": hash,
                "error": { "status": e.status.as_u16(), "message": e.message },
            });
            (e.status, Json(body)).into_response()
        }
    }
}

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> ApiResult<Option<T>> {
    q.get(name)
        .map(|v| v.parse::<T>().map_err(|_| ApiError::bad_request(format!("invalid query parameter {name}='{v}'"))))
        .transpose()
}

fn json_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

async fn blocking<T: Send + 'static>(
    session: &Arc<Session>,
    f: impl FnOnce(&Session) -> Result<T, SessionError> + Send + 'static,
) -> ApiResult<T> {
    let s = Arc::clone(session);
    tokio::task::spawn_blocking(move || f(&s))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/queue", get(get_queue))
        .route("/annotations", post(post_annotation))
        .route("/propagate", post(post_propagate))
        .route("/propagations", get(get_propagations))
        .route("/node/{id}/neighborhood", get(get_neighborhood))
        .route("/metrics", get(get_metrics))
        .route("/cycle/advance", post(post_advance))
        .fallback(not_found)
        .with_state(session)
}

async fn not_found(State(s): State<Arc<Session>>) -> Response {
    reply::<()>(&s, Err(ApiError::new(StatusCode::NOT_FOUND, "no such route")))
}

async fn get_session(State(s): State<Arc<Session>>) -> Response {
    reply(&s, Ok(s.summary()))
}

#[derive(Serialize)]
struct QueueItem {
    id: String,
    ts: i64,
    attrs: BTreeMap<String, Option<String>>,
    #[serde(flatten)]
    score: NodeScore,
    degree: usize,
    two_hop: usize,
}

#[derive(Serialize)]
struct QueuePayload {
    cycle: i64,
    per_class: usize,
    items: Vec<QueueItem>,
}

fn queue(s: &Session, q: &HashMap<String, String>) -> ApiResult<QueuePayload> {
    let cycle: i64 = param(q, "cycle")?.ok_or_else(|| ApiError::bad_request("missing query parameter cycle"))?;
    let per_class = param(q, "per_class")?.unwrap_or(s.protocol().config().per_class);
    let ids = s.queue(cycle, per_class)?;
    let g = s.protocol().graph();
    let indices: Vec<usize> = ids.iter().map(|id| g.index_of(id).expect("batch ids come from the graph")).collect();
    let scores = s.node_scores(&indices);
    let items = indices
        .iter()
        .zip(scores)
        .map(|(&i, score)| {
            let t = g.node(i);
            let two_hop = neighborhood(g, &t.id, 2).map_or(0, |sg| sg.nodes.len() - 1);
            QueueItem { id: t.id.clone(), ts: t.ts, attrs: t.attrs.clone(), score, degree: g.degree(i), two_hop }
        })
        .collect();
    Ok(QueuePayload { cycle, per_class, items })
}

async fn get_queue(State(s): State<Arc<Session>>, Query(q): Query<HashMap<String, String>>) -> Response {
    reply(&s, queue(&s, &q))
}

#[derive(Deserialize)]
struct AnnotationBody {
    node_id: String,
    score: f64,
}

#[derive(Serialize)]
struct AnnotationAck {
    accepted: bool,
    node_id: String,
    seed_count: usize,
}

async fn post_annotation(State(s): State<Arc<Session>>, headers: HeaderMap, body: Bytes) -> Response {
    let result = (|| {
        let annotator = s
            .annotator_for(bearer(&headers))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing or unknown bearer token"))?;
        let b: AnnotationBody = json_body(&body)?;
        let seed_count = s.annotate(&b.node_id, b.score, &annotator)?;
        Ok(AnnotationAck { accepted: true, node_id: b.node_id, seed_count })
    })();
    reply(&s, result)
}

async fn post_propagate(State(s): State<Arc<Session>>) -> Response {
    // fail fast without occupying a blocking thread
    let result = if s.is_propagating() {
        Err(SessionError::Busy.into())
    } else {
        blocking(&s, |s| s.propagate()).await
    };
    reply(&s, result)
}

async fn get_propagations(State(s): State<Arc<Session>>) -> Response {
    reply(&s, Ok(s.history()))
}

#[derive(Serialize)]
struct NeighborhoodNode {
    id: String,
    hop: usize,
    #[serde(flatten)]
    score: NodeScore,
}

#[derive(Serialize)]
struct NeighborhoodPayload {
    center: String,
    hops: usize,
    nodes: Vec<NeighborhoodNode>,
    edges: Vec<fbprop_core::graph::SubgraphEdge>,
}

fn neighborhood_payload(s: &Session, id: &str, q: &HashMap<String, String>) -> ApiResult<NeighborhoodPayload> {
    let hops: usize = param::<i64>(q, "hops")?
        .map(|h| {
            if (1..=MAX_NEIGHBORHOOD_HOPS as i64).contains(&h) {
                Ok(h as usize)
            } else {
                Err(ApiError::bad_request(format!("hops must be in 1..={MAX_NEIGHBORHOOD_HOPS}")))
            }
        })
        .transpose()?
        .unwrap_or(2);
    let g = s.protocol().graph();
    if g.index_of(id).is_none() {
        return Err(SessionError::UnknownNode(id.to_string()).into());
    }
    let sg = neighborhood(g, id, hops).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e.to_string()))?;
    let indices: Vec<usize> = sg.nodes.iter().map(|n| n.index).collect();
    let scores = s.node_scores(&indices);
    let nodes = sg
        .nodes
        .into_iter()
        .zip(scores)
        .map(|(n, score)| NeighborhoodNode { id: n.id, hop: n.hop, score })
        .collect();
    Ok(NeighborhoodPayload { center: id.to_string(), hops, nodes, edges: sg.edges })
}

async fn get_neighborhood(
    State(s): State<Arc<Session>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    reply(&s, neighborhood_payload(&s, &id, &q))
}

async fn get_metrics(State(s): State<Arc<Session>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let result = match q.get("mode") {
        None => Ok(serde_json::to_value(s.reports()).expect("reports serialize")),
        Some(m) => m
            .parse::<Mode>()
            .map_err(ApiError::bad_request)
            .and_then(|mode| s.report(mode).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "mode not in session")))
            .map(|r| serde_json::to_value(r).expect("report serializes")),
    };
    reply::<Value>(&s, result)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    cycle: Option<i64>,
}

async fn post_advance(State(s): State<Arc<Session>>, body: Bytes) -> Response {
    let expected = if body.iter().all(u8::is_ascii_whitespace) {
        Ok(None)
    } else {
        json_body::<Option<AdvanceBody>>(&body).map(|b| b.and_then(|b| b.cycle))
    };
    let result = match expected {
        Ok(expected) => blocking(&s, move |s| s.advance(expected)).await,
        Err(e) => Err(e),
    };
    reply(&s, result)
}

/// Serves until ctrl-c.
pub async fn serve(session: Arc<Session>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
