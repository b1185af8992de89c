//! HTTP front end for listener annotation rounds.
//!
//! All routes live under `/api/v1`. Annotator-facing payloads (`/round`)
//! never carry threshold labels, attribute values or group keys; the
//! operator endpoints (`/agreement`, `/thresholds`, `/log`) do.

pub mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use histyle_core::annotation::{
    level_wire_name, parse_vote_level, AgreementReport, AnnotationSession, SessionEvent, SessionStatus, Vote,
};
use histyle_core::{Attribute, Error, Level};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use store::{EventStore, SessionInit};

pub struct AppState {
    session: RwLock<AnnotationSession>,
    store: Option<std::sync::Mutex<EventStore>>,
}

impl AppState {
    /// Session kept in memory only.
    pub fn in_memory(session: AnnotationSession) -> Arc<Self> {
        Arc::new(Self {
            session: RwLock::new(session),
            store: None,
        })
    }

    /// Session whose events are appended to `store`.
    pub fn persistent(session: AnnotationSession, store: EventStore) -> Arc<Self> {
        Arc::new(Self {
            session: RwLock::new(session),
            store: Some(std::sync::Mutex::new(store)),
        })
    }

    /// Read access for callers embedding the service.
    pub fn with_session<T>(&self, f: impl FnOnce(&AnnotationSession) -> T) -> T {
        f(&self.session.read().unwrap_or_else(|e| e.into_inner()))
    }

    /// Apply one mutation and persist the event it produced, holding the
    /// write lock throughout so the log order matches the applied order.
    fn mutate<T>(&self, f: impl FnOnce(&mut AnnotationSession) -> Result<T, Error>) -> Result<T, ApiError> {
        let mut s = self.session.write().unwrap_or_else(|e| e.into_inner());
        let before = s.events().len();
        let out = f(&mut s).map_err(ApiError::from)?;
        if let Some(store) = &self.store {
            let mut store = store.lock().unwrap_or_else(|e| e.into_inner());
            for e in &s.events()[before..] {
                store.append(e).map_err(ApiError::from)?;
            }
            if s.events()[before..].iter().any(|e| !matches!(e, SessionEvent::Vote(_))) {
                store.snapshot(&s).map_err(ApiError::from)?;
            }
        }
        Ok(out)
    }

    /// Open the first round if the session has not started yet.
    pub fn start(&self) -> Result<(), ApiError> {
        self.mutate(|s| {
            if s.status() == SessionStatus::Idle {
                s.start()?;
            }
            Ok(())
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: None,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NoActiveRound => ApiError::new(StatusCode::NOT_FOUND, "no_active_round", msg),
            Error::UnknownItem(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_item", msg),
            Error::Quorum { .. } => ApiError::new(StatusCode::CONFLICT, "quorum_incomplete", msg),
            Error::Finalized => ApiError::new(StatusCode::CONFLICT, "finalized", msg),
            Error::Io(_) | Error::Json(_) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", msg),
            _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.detail {
            body["detail"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Allowed browser origin; `None` allows any.
    pub cors_origin: Option<String>,
}

pub fn router(state: Arc<AppState>, cfg: &ServiceConfig) -> Router {
    let cors = match &cfg.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let api = Router::new()
        .route("/round", get(get_round))
        .route("/votes", post(post_vote))
        .route("/agreement", get(get_agreement))
        .route("/advance", post(post_advance))
        .route("/audio/{item_id}", get(get_audio))
        .route("/thresholds", get(get_thresholds))
        .route("/state", get(get_state))
        .route("/log", get(get_log));
    Router::new().nest("/api/v1", api).layer(cors).with_state(state)
}

/// Serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, cfg: &ServiceConfig) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, state, cfg).await
}

/// Serve on an already bound listener until Ctrl-C.
pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>, cfg: &ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(state, cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Serialize)]
struct RoundItemView {
    item_id: String,
    attribute: Attribute,
    audio_url: Option<String>,
    levels: Vec<&'static str>,
}

#[derive(Debug, Serialize)]
struct Progress {
    expected_per_annotator: usize,
    submitted: BTreeMap<String, usize>,
}

#[derive(Debug, Deserialize)]
struct RoundQuery {
    annotator: Option<String>,
}

fn wire_levels(attr: Attribute) -> Vec<&'static str> {
    Level::ALL.iter().map(|&l| level_wire_name(attr, l)).collect()
}

async fn get_round(State(st): State<Arc<AppState>>, Query(q): Query<RoundQuery>) -> ApiResult<Json<Value>> {
    st.with_session(|s| {
        let round = s.current_round().ok_or(Error::NoActiveRound)?;
        let items: Vec<RoundItemView> = round
            .items
            .iter()
            .map(|it| RoundItemView {
                item_id: it.item_id.clone(),
                attribute: it.attribute,
                audio_url: s
                    .record(&it.item_id)
                    .and_then(|r| r.audio_path.as_ref())
                    .map(|_| format!("/api/v1/audio/{}", it.item_id)),
                levels: wire_levels(it.attribute),
            })
            .collect();
        let mut attributes: Vec<Attribute> = round.items.iter().map(|i| i.attribute).collect();
        attributes.sort();
        attributes.dedup();
        let submitted = s
            .roster
            .iter()
            .map(|a| (a.clone(), round.votes.iter().filter(|v| &v.annotator == a).count()))
            .collect();
        let mut body = json!({
            "round": round.index,
            "attributes": attributes,
            "items": items,
            "roster": s.roster,
            "progress": Progress { expected_per_annotator: round.items.len(), submitted },
        });
        if let Some(a) = q.annotator {
            let mine: Vec<Value> = round
                .votes
                .iter()
                .filter(|v| v.annotator == a)
                .map(|v| json!({ "item_id": v.item_id, "attribute": v.attribute, "level": level_wire_name(v.attribute, v.level) }))
                .collect();
            body["my_votes"] = Value::Array(mine);
        }
        Ok(Json(body))
    })
    .map_err(|e: Error| e.into())
}

#[derive(Debug, Deserialize)]
pub struct VoteBody {
    pub item_id: String,
    pub annotator_id: String,
    pub attribute: String,
    pub level: String,
}

async fn post_vote(State(st): State<Arc<AppState>>, Json(body): Json<VoteBody>) -> ApiResult<Json<Value>> {
    let attribute: Attribute = body
        .attribute
        .parse()
        .map_err(|e: Error| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_attribute", e.to_string()))?;
    let level = parse_vote_level(attribute, &body.level)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_level", e.to_string()))?;
    let vote = Vote {
        annotator: body.annotator_id,
        item_id: body.item_id,
        attribute,
        level,
    };
    let echo = json!({
        "ok": true,
        "item_id": vote.item_id,
        "annotator_id": vote.annotator,
        "attribute": attribute,
        "level": level_wire_name(attribute, level),
    });
    st.mutate(|s| s.record_vote(vote))?;
    Ok(Json(echo))
}

#[derive(Debug, Serialize)]
struct AgreementView {
    round: Option<usize>,
    status: SessionStatus,
    target_agreement: f64,
    trigger: f64,
    missing_votes: BTreeMap<String, usize>,
    /// `None` until the round has at least one vote.
    report: Option<AgreementReport>,
}

async fn get_agreement(State(st): State<Arc<AppState>>) -> ApiResult<Json<AgreementView>> {
    st.with_session(|s| {
        let (round, report, missing) = match s.current_round() {
            Some(r) => {
                let report = if r.votes.is_empty() { None } else { Some(s.agreement()?) };
                let missing = s
                    .roster
                    .iter()
                    .map(|a| (a.clone(), r.missing_votes(std::slice::from_ref(a))))
                    .collect();
                (Some(r.index), report, missing)
            }
            None => match s.log().last() {
                Some(l) => (Some(l.round.index), Some(l.report.clone()), BTreeMap::new()),
                None => return Err(Error::NoActiveRound),
            },
        };
        Ok(Json(AgreementView {
            round,
            status: s.status(),
            target_agreement: s.config.target_agreement,
            trigger: s.config.adjust.trigger,
            missing_votes: missing,
            report,
        }))
    })
    .map_err(ApiError::from)
}

#[derive(Debug, Default, Deserialize)]
struct AdvanceBody {
    #[serde(default)]
    force: bool,
}

async fn post_advance(State(st): State<Arc<AppState>>, body: Option<Json<AdvanceBody>>) -> ApiResult<Json<Value>> {
    let force = body.map(|b| b.0.force).unwrap_or(false);
    let per_annotator: BTreeMap<String, usize> = st.with_session(|s| {
        s.current_round()
            .map(|r| {
                s.roster
                    .iter()
                    .map(|a| (a.clone(), r.missing_votes(std::slice::from_ref(a))))
                    .collect()
            })
            .unwrap_or_default()
    });
    let out = st.mutate(|s| s.advance(force)).map_err(|mut e| {
        if e.code == "quorum_incomplete" {
            e.detail = Some(json!({ "missing_votes": per_annotator }));
        }
        e
    })?;
    Ok(Json(serde_json::to_value(out).map_err(|e| ApiError::from(Error::from(e)))?))
}

async fn get_thresholds(State(st): State<Arc<AppState>>) -> Json<Value> {
    st.with_session(|s| Json(serde_json::to_value(s.table()).unwrap_or(Value::Null)))
}

async fn get_state(State(st): State<Arc<AppState>>) -> Json<Value> {
    st.with_session(|s| {
        Json(json!({
            "status": s.status(),
            "round": s.current_round().map(|r| r.index),
            "rounds_completed": s.log().len(),
            "roster": s.roster,
            "target_agreement": s.config.target_agreement,
            "max_rounds": s.config.max_rounds,
        }))
    })
}

async fn get_log(State(st): State<Arc<AppState>>) -> Json<Value> {
    st.with_session(|s| Json(serde_json::to_value(s.log()).unwrap_or(Value::Null)))
}

fn audio_path(st: &AppState, item_id: &str) -> ApiResult<PathBuf> {
    st.with_session(|s| {
        s.record(item_id)
            .and_then(|r| r.audio_path.clone())
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_item", format!("no audio for item {item_id:?}")))
    })
}

/// Parse a single `bytes=` range against a body of `len` bytes.
fn parse_range(spec: &str, len: u64) -> Option<(u64, u64)> {
    let r = spec.strip_prefix("bytes=")?.trim();
    if r.contains(',') || len == 0 {
        return None;
    }
    let (a, b) = r.split_once('-')?;
    let (start, end) = if a.is_empty() {
        let n: u64 = b.parse().ok()?;
        if n == 0 {
            return None;
        }
        (len.saturating_sub(n), len - 1)
    } else {
        let s: u64 = a.parse().ok()?;
        let e = if b.is_empty() { len - 1 } else { b.parse::<u64>().ok()?.min(len - 1) };
        (s, e)
    };
    (start <= end && start < len).then_some((start, end))
}

async fn get_audio(State(st): State<Arc<AppState>>, Path(item_id): Path<String>, headers: HeaderMap) -> ApiResult<Response> {
    let path = audio_path(&st, &item_id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "audio_missing", e.to_string()))?;
    let len = bytes.len() as u64;
    let base = [
        (header::CONTENT_TYPE, HeaderValue::from_static("audio/wav")),
        (header::ACCEPT_RANGES, HeaderValue::from_static("bytes")),
    ];
    let Some(range) = headers.get(header::RANGE).and_then(|v| v.to_str().ok()) else {
        return Ok((StatusCode::OK, base, bytes).into_response());
    };
    match parse_range(range, len) {
        Some((s, e)) => {
            let content_range = HeaderValue::from_str(&format!("bytes {s}-{e}/{len}")).expect("ascii header");
            let body = bytes[s as usize..=e as usize].to_vec();
            Ok((StatusCode::PARTIAL_CONTENT, base, [(header::CONTENT_RANGE, content_range)], body).into_response())
        }
        None => {
            let content_range = HeaderValue::from_str(&format!("bytes */{len}")).expect("ascii header");
            Ok((StatusCode::RANGE_NOT_SATISFIABLE, [(header::CONTENT_RANGE, content_range)]).into_response())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("bytes=0-99", 1000), Some((0, 99)));
        assert_eq!(parse_range("bytes=990-", 1000), Some((990, 999)));
        assert_eq!(parse_range("bytes=-10", 1000), Some((990, 999)));
        assert_eq!(parse_range("bytes=900-5000", 1000), Some((900, 999)));
        assert_eq!(parse_range("bytes=1000-1001", 1000), None);
        assert_eq!(parse_range("bytes=5-2", 1000), None);
        assert_eq!(parse_range("bytes=0-1,4-5", 1000), None);
        assert_eq!(parse_range("items=0-1", 1000), None);
    }
}
