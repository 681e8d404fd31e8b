use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dialoguekit::dml::{parse_corpus, parse_domain};
use dialoguekit::models::{train, ModelConfig, Models};
use dialoguekit::runtime::{Agent, ApiExecutor, RuntimeConfig};
use dialoguekit_cli::service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

/// A bundle overfit to the movie-duration seed dialogue; trained once.
fn models() -> Arc<Models> {
    static MODELS: OnceLock<Arc<Models>> = OnceLock::new();
    MODELS
        .get_or_init(|| {
            let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../domains/ticketbot");
            let schema =
                parse_domain(&std::fs::read_to_string(dir.join("schema.json")).unwrap()).unwrap();
            let seeds = parse_corpus(
                &std::fs::read_to_string(dir.join("seeds.jsonl")).unwrap(),
                &schema,
            )
            .unwrap();
            let d: Vec<_> = seeds
                .into_iter()
                .filter(|d| d.id.as_deref() == Some("ticket-seed-table1"))
                .collect();
            let cfg = ModelConfig {
                epochs: 200,
                word_dropout: 0.0,
                ..ModelConfig::default()
            };
            Arc::new(train(&d, &schema, &cfg).unwrap().0)
        })
        .clone()
}

fn state(log_dir: PathBuf) -> Arc<AppState> {
    let models = models();
    let schema = models.schema.clone();
    let agent = Agent::new(
        &schema,
        models,
        ApiExecutor::mock(),
        RuntimeConfig::default(),
    )
    .unwrap();
    Arc::new(AppState::new(agent, log_dir).unwrap())
}

async fn call(
    state: &Arc<AppState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn say(state: &Arc<AppState>, id: &str, text: &str) -> (StatusCode, Value) {
    call(
        state,
        "POST",
        &format!("/sessions/{id}/utterances"),
        Some(json!({ "utterance": text })),
    )
    .await
}

fn names(v: &Value) -> Vec<&str> {
    v["executed_actions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["name"].as_str().unwrap())
        .collect()
}

#[tokio::test]
async fn conversation_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path().to_path_buf());
    let (code, health) = call(&st, "GET", "/healthz", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(health["status"], "ok");

    let (code, created) = call(&st, "POST", "/sessions", None).await;
    assert_eq!(code, StatusCode::OK);
    let id = created["session_id"].as_str().unwrap().to_string();
    assert!(created["welcome_text"].as_str().unwrap().contains("movies"));

    let (code, turn) = say(&st, &id, "how long is la la land").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(
        names(&turn),
        ["GetDuration", "inform_movie_duration", "EndTurn"]
    );
    assert_eq!(turn["entities"][0]["value"], "la la land");
    assert_eq!(turn["entities"][0]["entity_type"], "Movie");
    assert_eq!(turn["ended"], false);
    assert!(turn.get("debug").is_none());
    assert!(!turn["agent_text"].as_str().unwrap().is_empty());

    let (_, turn) = call(
        &st,
        "POST",
        &format!("/sessions/{id}/utterances?debug=1"),
        Some(json!({"utterance": "who stars in it"})),
    )
    .await;
    assert_eq!(names(&turn), ["GetCast", "inform_movie_cast", "EndTurn"]);
    assert_eq!(
        turn["executed_actions"][0]["args"]["movieTitle"],
        json!(["la la land"])
    );
    assert!(turn["debug"]["steps"]
        .as_array()
        .is_some_and(|s| !s.is_empty()));

    let (_, turn) = say(&st, &id, "exit").await;
    assert_eq!(turn["ended"], true);
    let (code, err) = say(&st, &id, "hello again").await;
    assert_eq!(code, StatusCode::GONE);
    assert_eq!(err["code"], "session_ended");
    assert!(err["message"].is_string());

    let (code, log) = call(&st, "GET", &format!("/sessions/{id}/log"), None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(log["ended"], true);
    let lines = log["lines"].as_array().unwrap();
    assert_eq!(lines[0]["kind"], "session");
    assert!(lines.iter().any(|l| l["event"]["type"] == "end_dialogue"));
}

#[tokio::test]
async fn errors_use_codes() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path().to_path_buf());
    let (code, err) = say(&st, "s999999", "hi").await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "session_not_found");
    let (_, created) = call(&st, "POST", "/sessions", None).await;
    let id = created["session_id"].as_str().unwrap();
    let (code, err) = call(
        &st,
        "POST",
        &format!("/sessions/{id}/utterances"),
        Some(json!({"text": "hi"})),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad_request");
    let (code, _) = say(&st, id, "   ").await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    let (code, _) = call(&st, "GET", "/sessions/nope/log", None).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, ended_id) = {
        let st = state(dir.path().to_path_buf());
        let (_, a) = call(&st, "POST", "/sessions", None).await;
        let (_, b) = call(&st, "POST", "/sessions", None).await;
        let id = a["session_id"].as_str().unwrap().to_string();
        let ended = b["session_id"].as_str().unwrap().to_string();
        say(&st, &id, "how long is la la land").await;
        say(&st, &ended, "exit").await;
        (id, ended)
    };
    let st = state(dir.path().to_path_buf());
    assert_eq!(st.session_count(), 2);
    // the reloaded history still resolves "it"
    let (code, turn) = say(&st, &id, "who stars in it").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(
        turn["executed_actions"][0]["args"]["movieTitle"],
        json!(["la la land"])
    );
    let (code, _) = say(&st, &ended_id, "hi").await;
    assert_eq!(code, StatusCode::GONE);
    // new ids do not collide with reloaded ones
    let (_, c) = call(&st, "POST", "/sessions", None).await;
    let new_id = c["session_id"].as_str().unwrap();
    assert!(new_id != id && new_id != ended_id);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_turns_on_one_session_are_serialized() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path().to_path_buf());
    let (_, created) = call(&st, "POST", "/sessions", None).await;
    let id = created["session_id"].as_str().unwrap().to_string();
    let mut handles = Vec::new();
    for _ in 0..4 {
        let (st, id) = (st.clone(), id.clone());
        handles.push(tokio::spawn(async move {
            say(&st, &id, "how long is la la land").await
        }));
    }
    let mut answered = 0;
    for h in handles {
        let (code, body) = h.await.unwrap();
        // the model was fit to one dialogue and may end this one early
        assert!(code == StatusCode::OK || code == StatusCode::GONE, "{body}");
        answered += usize::from(code == StatusCode::OK);
    }
    let (_, log) = call(&st, "GET", &format!("/sessions/{id}/log"), None).await;
    let lines = log["lines"].as_array().unwrap();
    let users = lines
        .iter()
        .filter(|l| l["event"]["type"] == "user")
        .count();
    assert!(answered >= 1);
    assert_eq!(users, answered);
    // sequence numbers are strictly increasing: no interleaved writes
    let seqs: Vec<u64> = lines.iter().filter_map(|l| l["seq"].as_u64()).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
}
