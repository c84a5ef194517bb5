use std::path::{Path, PathBuf};
use std::sync::Arc;

use auditnet_core::corpus::DocFormat;
use auditnet_core::embed::MockEmbedder;
use auditnet_core::engine::{Engine, EngineConfig};
use auditnet_core::llm::{ChatGateway, ScriptedMock};
use auditnet_server::{router, AppState, ServerConfig};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fixtures")
}

pub fn fixture_script() -> ScriptedMock {
    ScriptedMock::from_json_file(&fixtures().join("mock_script.json")).unwrap()
}

/// An engine over the two fixture standards with a built index.
pub fn seeded_engine(dir: &Path, gateway: Arc<dyn ChatGateway>) -> Engine {
    std::fs::copy(fixtures().join("subjects.json"), dir.join("subjects.json")).unwrap();
    let config = EngineConfig::new(dir);
    let mut engine = Engine::with_providers(config, Arc::new(MockEmbedder::new(64)), gateway).unwrap();
    let a = std::fs::read_to_string(fixtures().join("standard_a.md")).unwrap();
    let b = std::fs::read_to_string(fixtures().join("standard_b.txt")).unwrap();
    engine.ingest("Network Access Standard", "Standard A", DocFormat::Markdown, &a).unwrap();
    engine.ingest("Identity and Authentication Standard", "Standard B", DocFormat::Plaintext, &b).unwrap();
    engine.rebuild_index().unwrap();
    engine
}

pub fn app(engine: Engine) -> Router {
    let config = ServerConfig::default();
    router(AppState::new(engine, config.session_ttl), &config)
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

pub async fn new_session(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/v1/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}
