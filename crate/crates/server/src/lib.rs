//! HTTP API over the audit engine: document ingestion, indexing, and the
//! query → confirm → answer session workflow. Every route lives under `/v1`.

pub mod error;
pub mod session;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use auditnet_core::composer::AnswerBundle;
use auditnet_core::corpus::DocFormat;
use auditnet_core::engine::Engine;
use auditnet_core::interpreter::{confirm, Interpretation, SlotEdits};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use error::{ApiError, ErrorCode};
use session::{HistoryEntry, SessionState, SessionStore};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub port: u16,
    /// Allowed browser origins; `None` allows any origin.
    pub cors_origins: Option<Vec<String>>,
    pub session_ttl: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            cors_origins: None,
            session_ttl: session::DEFAULT_TTL,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Arc<RwLock<Engine>>,
    sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(engine: Engine, session_ttl: Duration) -> Self {
        Self {
            engine: Arc::new(RwLock::new(engine)),
            sessions: Arc::new(SessionStore::new(session_ttl)),
        }
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    /// Runs `f` on a blocking thread with shared access to the engine.
    async fn read<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Engine) -> Result<T, ApiError> + Send + 'static,
    {
        let engine = self.engine.clone();
        tokio::task::spawn_blocking(move || f(&engine.read().expect("engine lock poisoned")))
            .await
            .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
    }

    async fn write<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Engine) -> Result<T, ApiError> + Send + 'static,
    {
        let engine = self.engine.clone();
        tokio::task::spawn_blocking(move || f(&mut engine.write().expect("engine lock poisoned")))
            .await
            .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
    }
}

/// Parses a JSON body; an empty body counts as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

#[derive(Deserialize)]
struct NewDocument {
    title: String,
    standard: String,
    #[serde(default)]
    format: Option<String>,
    content: String,
}

#[derive(Deserialize)]
struct QueryRequest {
    text: String,
}

#[derive(Serialize)]
struct QueryResponse {
    interpretation: Interpretation,
    status: SessionState,
    degraded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    degraded_reason: Option<String>,
}

#[derive(Serialize)]
struct FindingView {
    chunk_id: String,
    doc_id: String,
    heading_path: Vec<String>,
    control_id: Option<String>,
    score: f64,
    tags: Vec<String>,
}

#[derive(Serialize)]
struct AnswerView {
    markdown: String,
    findings: Vec<FindingView>,
    interpretation: Interpretation,
    created_at: chrono::DateTime<Utc>,
}

impl From<&AnswerBundle> for AnswerView {
    fn from(a: &AnswerBundle) -> Self {
        let findings = a
            .findings
            .iter()
            .zip(&a.tag_results)
            .map(|(f, t)| FindingView {
                chunk_id: f.chunk_id.clone(),
                doc_id: f.doc_id.clone(),
                heading_path: f.heading_path.clone(),
                control_id: f.control_id.clone(),
                score: f.score,
                tags: t.tags.clone(),
            })
            .collect();
        Self {
            markdown: a.rendered_markdown.clone(),
            findings,
            interpretation: a.interpretation.clone(),
            created_at: a.created_at,
        }
    }
}

#[derive(Serialize)]
struct SessionView<'a> {
    session_id: &'a str,
    state: SessionState,
    pending: Option<&'a Interpretation>,
    created_at: chrono::DateTime<Utc>,
    history: &'a [HistoryEntry],
}

async fn health(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let mode = state.read(|e| Ok(e.provider_mode())).await?;
    Ok(Json(json!({"status": "ok", "provider_mode": mode})))
}

async fn add_document(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let doc: NewDocument = parse_body(&body)?;
    let format = match doc.format.as_deref() {
        None => DocFormat::Markdown,
        Some(f) => f.parse().map_err(ApiError::validation)?,
    };
    if doc.title.trim().is_empty() {
        return Err(ApiError::validation("title is empty"));
    }
    let outcome = state
        .write(move |e| Ok(e.ingest(&doc.title, &doc.standard, format, &doc.content)?))
        .await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "doc_id": outcome.doc_id,
            "created": outcome.created,
            "n_sections": outcome.n_sections,
            "n_chunks": outcome.n_chunks,
        })),
    ))
}

async fn list_documents(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let manifest = state.read(|e| Ok(e.manifest())).await?;
    Ok(Json(serde_json::to_value(manifest).expect("manifest serializes")))
}

async fn rebuild_index(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let outcome = state.write(|e| Ok(e.rebuild_index()?)).await?;
    Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
}

async fn create_session(State(state): State<AppState>) -> (StatusCode, Json<Value>) {
    let id = state.sessions.create();
    (StatusCode::CREATED, Json(json!({"session_id": id})))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let session = state.sessions.get(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let s = session.lock().await;
    let view = SessionView {
        session_id: &s.session_id,
        state: s.state(),
        pending: s.pending(),
        created_at: s.created_at,
        history: s.history(),
    };
    Ok(Json(serde_json::to_value(view).expect("session serializes")))
}

async fn submit_query(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<QueryResponse>, ApiError> {
    let session = state.sessions.get(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let req: QueryRequest = parse_body(&body)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::validation("query text is empty"));
    }
    // Held across the engine call so requests within a session serialize.
    let mut s = session.lock().await;
    s.check_can_query()?;
    let interpreted = state.read(move |e| Ok(e.interpret_with_fallback(&req.text)?)).await?;
    s.begin_confirmation(interpreted.interpretation.clone())?;
    Ok(Json(QueryResponse {
        interpretation: interpreted.interpretation,
        status: s.state(),
        degraded: interpreted.degraded_reason.is_some(),
        degraded_reason: interpreted.degraded_reason,
    }))
}

async fn confirm_query(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let session = state.sessions.get(&id).ok_or_else(|| ApiError::session_not_found(&id))?;
    let mut s = session.lock().await;
    let pending = s.require_pending()?.clone();
    let edits: SlotEdits = parse_body(&body)?;
    let confirmed = confirm(&pending, &edits)?;
    let answer = state.read(move |e| Ok(e.answer(&confirmed, Utc::now())?)).await?;
    let view = AnswerView::from(&answer);
    s.complete(answer)?;
    Ok(Json(json!({"answer": view, "status": s.state()})))
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorCode::NotFound, "no such route")
}

fn cors_layer(origins: Option<&[String]>) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    match origins {
        None => layer.allow_origin(Any),
        Some(list) => {
            let values: Vec<HeaderValue> = list.iter().filter_map(|o| o.parse().ok()).collect();
            layer.allow_origin(AllowOrigin::list(values))
        }
    }
}

pub fn router(state: AppState, config: &ServerConfig) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/documents", post(add_document).get(list_documents))
        .route("/index/rebuild", post(rebuild_index))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", post(submit_query))
        .route("/sessions/{id}/confirm", post(confirm_query));
    Router::new()
        .nest("/v1", v1)
        .fallback(not_found)
        .layer(cors_layer(config.cors_origins.as_deref()))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    engine: Engine,
    config: ServerConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let state = AppState::new(engine, config.session_ttl);
    let app = router(state, &config);
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
