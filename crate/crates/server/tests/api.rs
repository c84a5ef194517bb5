mod common;

use std::sync::Arc;

use auditnet_core::embed::ProviderKind;
use auditnet_core::llm::{ChatGateway, CompletionRequest, LlmError};
use axum::http::StatusCode;
use common::{app, call, fixture_script, new_session, seeded_engine};
use serde_json::json;

const QUERY: &str = "Is device X compliant with the password policy of Standard B?";

struct Unreachable;

impl ChatGateway for Unreachable {
    fn complete(&self, _: &CompletionRequest) -> Result<String, LlmError> {
        Err(LlmError::ProviderUnreachable("connection refused".into()))
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Remote
    }
}

#[tokio::test]
async fn health_and_documents() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(fixture_script())));
    let (status, body) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "provider_mode": "mock"}));

    let (status, manifest) = call(&app, "GET", "/v1/documents", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(manifest["documents"].as_array().unwrap().len(), 2);

    let doc = json!({"title": "Extra", "standard": "Standard C", "format": "md", "content": "# 1 Scope\nEverything."});
    let (status, body) = call(&app, "POST", "/v1/documents", Some(doc)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["n_sections"], 1);
    assert_eq!(body["n_chunks"], 1);

    let (status, body) = call(&app, "POST", "/v1/index/rebuild", Some(json!({}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["chunk_limit_per_doc"].as_object().unwrap().len(), 3);
}

#[tokio::test]
async fn validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(fixture_script())));
    let bad = json!({"title": "x", "standard": "S", "format": "pdf", "content": "a"});
    let (status, body) = call(&app, "POST", "/v1/documents", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error_code"], "VALIDATION");

    let empty = json!({"title": "x", "standard": "S", "content": "  "});
    let (status, _) = call(&app, "POST", "/v1/documents", Some(empty)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let id = new_session(&app).await;
    let (status, body) = call(&app, "POST", &format!("/v1/sessions/{id}/query"), Some(json!({"txt": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error_code"], "VALIDATION");
    let (status, _) = call(&app, "POST", &format!("/v1/sessions/{id}/query"), Some(json!({"text": " "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn rebuild_on_empty_corpus_is_not_ready() {
    let dir = tempfile::tempdir().unwrap();
    let engine = auditnet_core::engine::Engine::with_providers(
        auditnet_core::engine::EngineConfig::new(dir.path()),
        Arc::new(auditnet_core::embed::MockEmbedder::new(64)),
        Arc::new(fixture_script()),
    )
    .unwrap();
    let app = app(engine);
    let (status, body) = call(&app, "POST", "/v1/index/rebuild", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error_code"], "NOT_READY");
}

#[tokio::test]
async fn sessions_have_distinct_hex_ids_and_start_idle() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(fixture_script())));
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    assert_eq!(a.len(), 32);
    assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
    let (status, body) = call(&app, "GET", &format!("/v1/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"], "idle");

    let (status, body) = call(&app, "POST", "/v1/sessions/deadbeef/query", Some(json!({"text": QUERY}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error_code"], "SESSION_NOT_FOUND");
}

#[tokio::test]
async fn query_confirm_answer_cites_planted_chunk() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(fixture_script())));
    let id = new_session(&app).await;

    let (status, body) = call(&app, "POST", &format!("/v1/sessions/{id}/confirm"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error_code"], "WRONG_STATE");

    let (status, body) = call(&app, "POST", &format!("/v1/sessions/{id}/query"), Some(json!({"text": QUERY}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "awaiting_confirmation");
    assert_eq!(body["interpretation"]["policy"], "password policy");
    assert_eq!(body["interpretation"]["standard"], "Standard B");
    assert_eq!(body["interpretation"]["subject"], "device X");
    assert_eq!(body["interpretation"]["source"], "llm");
    assert_eq!(body["degraded"], false);

    let (status, _) = call(&app, "POST", &format!("/v1/sessions/{id}/query"), Some(json!({"text": QUERY}))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, body) = call(&app, "POST", &format!("/v1/sessions/{id}/confirm"), Some(json!({}))).await;
    assert_eq!(status, StatusCode::OK);
    let answer = &body["answer"];
    let first = &answer["findings"][0];
    assert_eq!(first["control_id"], "5.2");
    assert!(first["heading_path"].as_array().unwrap().iter().any(|h| h == "5.2 Password complexity"));
    assert_eq!(first["tags"], json!(["password-policy"]));
    let md = answer["markdown"].as_str().unwrap();
    assert!(md.contains("password complexity"));
    let line_1 = md.lines().find(|l| l.ends_with(" [1]")).unwrap();
    assert!(line_1.contains("password complexity"));

    let (_, session) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(session["state"], "answered");
    assert_eq!(session["history"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn edits_pass_through_and_empty_slots_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(fixture_script())));
    let id = new_session(&app).await;
    call(&app, "POST", &format!("/v1/sessions/{id}/query"), Some(json!({"text": QUERY}))).await;

    let clear = json!({"policy": null, "standard": "", "subject": null});
    let (status, body) = call(&app, "POST", &format!("/v1/sessions/{id}/confirm"), Some(clear)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error_code"], "ALL_SLOTS_EMPTY");
    let (_, session) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(session["state"], "awaiting_confirmation");

    let (status, body) =
        call(&app, "POST", &format!("/v1/sessions/{id}/confirm"), Some(json!({"subject": "gateway-7"}))).await;
    assert_eq!(status, StatusCode::OK);
    let interp = &body["answer"]["interpretation"];
    assert_eq!(interp["subject"], "gateway-7");
    assert_eq!(interp["policy"], "password policy");
    assert_eq!(interp["source"], "user_edited");
    assert_eq!(interp["status"], "confirmed");
}

#[tokio::test]
async fn degraded_mode_uses_gazetteer() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(Unreachable)));
    let (_, health) = call(&app, "GET", "/v1/health", None).await;
    assert_eq!(health["provider_mode"], "llm=remote,embed=mock");

    let id = new_session(&app).await;
    let (status, body) = call(&app, "POST", &format!("/v1/sessions/{id}/query"), Some(json!({"text": QUERY}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["interpretation"]["source"], "gazetteer");
    assert_eq!(body["interpretation"]["standard"], "Standard B");
    assert_eq!(body["interpretation"]["subject"], "device X");
    assert_eq!(body["degraded"], true);

    let (status, body) = call(&app, "POST", &format!("/v1/sessions/{id}/confirm"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["answer"]["markdown"].as_str().unwrap().contains("**Standard:** Standard B"));
    for f in body["answer"]["findings"].as_array().unwrap() {
        assert_eq!(f["tags"], json!([]));
    }
}

#[tokio::test]
async fn interleaved_sessions_stay_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(fixture_script())));
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    call(&app, "POST", &format!("/v1/sessions/{a}/query"), Some(json!({"text": QUERY}))).await;
    let (_, sb) = call(&app, "GET", &format!("/v1/sessions/{b}"), None).await;
    assert_eq!(sb["state"], "idle");
    assert!(sb["pending"].is_null());

    let other = "Does the VPN gateway meet Standard A?";
    let (_, qb) = call(&app, "POST", &format!("/v1/sessions/{b}/query"), Some(json!({"text": other}))).await;
    assert_eq!(qb["interpretation"]["query_text"], other);

    let (_, ca) = call(&app, "POST", &format!("/v1/sessions/{a}/confirm"), Some(json!({"subject": "only-a"}))).await;
    assert_eq!(ca["answer"]["interpretation"]["query_text"], QUERY);
    let (_, sb) = call(&app, "GET", &format!("/v1/sessions/{b}"), None).await;
    assert_eq!(sb["state"], "awaiting_confirmation");
    assert_eq!(sb["pending"]["query_text"], other);
    assert_eq!(sb["pending"]["subject"], "device X");
}

#[tokio::test]
async fn concurrent_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(seeded_engine(dir.path(), Arc::new(fixture_script())));
    let mut handles = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let id = new_session(&app).await;
            let text = format!("{QUERY} #{i}");
            let (s1, _) = call(&app, "POST", &format!("/v1/sessions/{id}/query"), Some(json!({"text": text}))).await;
            let (s2, body) = call(&app, "POST", &format!("/v1/sessions/{id}/confirm"), None).await;
            assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
            assert_eq!(body["answer"]["interpretation"]["query_text"], text);
        }));
    }
    for h in handles {
        h.await.unwrap();
    }
}
