use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use p2_harness::bench::{load_results, BenchError};
use p2_harness::prompt::Role;
use p2_harness::{
    run_benchmark, Attachment, BenchOptions, ChatClient, ChatError, ChatRequest, EndpointConfig,
    Existing, HttpChatClient, Message, Setting,
};
use perception_program::ingest::TaskInstance;
use serde_json::{json, Value};

struct Scripted {
    status: u16,
    retry_after: Option<&'static str>,
    body: String,
}

fn ok_body(text: &str) -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 7}
    })
    .to_string()
}

fn reply(status: u16, body: &str) -> Scripted {
    Scripted {
        status,
        retry_after: None,
        body: body.into(),
    }
}

#[derive(Clone, Default)]
struct Mock {
    script: Arc<Mutex<VecDeque<Scripted>>>,
    hits: Arc<AtomicUsize>,
    inflight: Arc<AtomicUsize>,
    max_inflight: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<(Option<String>, Value)>>>,
    delay: Duration,
}

async fn handle(
    State(m): State<Mock>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> impl IntoResponse {
    m.hits.fetch_add(1, Ordering::SeqCst);
    let now = m.inflight.fetch_add(1, Ordering::SeqCst) + 1;
    m.max_inflight.fetch_max(now, Ordering::SeqCst);
    let auth = headers
        .get("authorization")
        .map(|v| v.to_str().unwrap().to_string());
    m.bodies.lock().unwrap().push((auth, body));
    tokio::time::sleep(m.delay).await;
    let next = m
        .script
        .lock()
        .unwrap()
        .pop_front()
        .unwrap_or_else(|| reply(200, &ok_body("Answer: (A)")));
    m.inflight.fetch_sub(1, Ordering::SeqCst);
    let mut out = HeaderMap::new();
    if let Some(s) = next.retry_after {
        out.insert("retry-after", s.parse().unwrap());
    }
    (StatusCode::from_u16(next.status).unwrap(), out, next.body)
}

async fn serve(mock: Mock) -> String {
    let app = Router::new()
        .route("/v1/chat/completions", post(handle))
        .with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1/chat/completions")
}

fn client(url: String, max_attempts: u32) -> HttpChatClient {
    let mut c = EndpointConfig::new(url, "mock-model");
    c.max_attempts = max_attempts;
    c.backoff_base_ms = 1;
    c.backoff_cap_ms = 5;
    c.temperature = Some(0.0);
    c.max_tokens = Some(64);
    HttpChatClient::with_key(c, Some("sk-test".into())).unwrap()
}

fn request() -> ChatRequest {
    ChatRequest {
        tag: "t".into(),
        messages: vec![
            Message::text(Role::System, "sys"),
            Message::text(Role::User, "hi"),
        ],
    }
}

fn with_script(items: Vec<Scripted>) -> Mock {
    Mock {
        script: Arc::new(Mutex::new(items.into())),
        ..Default::default()
    }
}

#[tokio::test]
async fn rate_limits_are_retried() {
    let mock = with_script(vec![
        Scripted {
            status: 429,
            retry_after: Some("0"),
            body: "slow down".into(),
        },
        reply(429, "slow down"),
        reply(200, &ok_body("(B)")),
    ]);
    let c = client(serve(mock.clone()).await, 6);
    let r = c.complete(&request()).await.unwrap();
    assert_eq!(r.text, "(B)");
    assert_eq!(r.attempts, 3);
    assert_eq!((r.prompt_tokens, r.completion_tokens), (Some(11), Some(7)));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn auth_failure_is_not_retried() {
    let mock = with_script(vec![reply(401, "bad key")]);
    let c = client(serve(mock.clone()).await, 6);
    let e = c.complete(&request()).await.unwrap_err();
    assert!(
        matches!(e, ChatError::AuthFailure { status: 401, .. }),
        "{e:?}"
    );
    assert_eq!(mock.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn server_errors_exhaust_attempts() {
    let mock = with_script((0..10).map(|_| reply(503, "down")).collect());
    let c = client(serve(mock.clone()).await, 3);
    match c.complete(&request()).await.unwrap_err() {
        ChatError::ExhaustedRetries { attempts, last } => {
            assert_eq!(attempts, 3);
            assert!(last.contains("503"));
        }
        e => panic!("{e:?}"),
    }
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_and_garbage_fail_fast() {
    let mock = with_script(vec![reply(400, "bad request"), reply(200, "not json")]);
    let c = client(serve(mock.clone()).await, 6);
    assert!(matches!(
        c.complete(&request()).await,
        Err(ChatError::Rejected { status: 400, .. })
    ));
    assert!(matches!(
        c.complete(&request()).await,
        Err(ChatError::MalformedResponse(_))
    ));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn request_body_shape() {
    let mock = Mock::default();
    let c = client(serve(mock.clone()).await, 1);
    let mut req = request();
    req.messages[1]
        .parts
        .push(p2_harness::prompt::Part::Image(Attachment::from_bytes(
            "x",
            b"\x89PNG\r\n\x1a\n".to_vec(),
        )));
    c.complete(&req).await.unwrap();
    let (auth, body) = mock.bodies.lock().unwrap()[0].clone();
    assert_eq!(auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(
        body["messages"][0],
        json!({"role": "system", "content": "sys"})
    );
    let parts = body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(parts[0], json!({"type": "text", "text": "hi"}));
    assert!(parts[1]["image_url"]["url"]
        .as_str()
        .unwrap()
        .starts_with("data:image/png;base64,"));
}

fn tasks(n: usize) -> Vec<TaskInstance> {
    (0..n)
        .map(|i| {
            serde_json::from_value(json!({
                "id": format!("t{i}"),
                "kind": "multi_view",
                "images": [],
                "prompt": "Which way?",
                "options": {"A": "left", "B": "right"},
                "answer": if i % 2 == 0 { "A" } else { "B" }
            }))
            .unwrap()
        })
        .collect()
}

#[tokio::test]
async fn sequential_benchmark_over_http() {
    let mock = Mock {
        delay: Duration::from_millis(5),
        ..Default::default()
    };
    let c = client(serve(mock.clone()).await, 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let mut opts = BenchOptions::new(Setting::Standard);
    opts.concurrency = 1;
    let s = run_benchmark(&tasks(6), &opts, &c, &out).await.unwrap();
    assert_eq!(mock.max_inflight.load(Ordering::SeqCst), 1);
    assert_eq!(s.overall.accuracy, Some(50.0));
    assert_eq!(s.overall.mean_total_tokens, Some(18.0));
    let records = load_results(&out).unwrap();
    assert_eq!(records.len(), 6);
    assert!(records
        .iter()
        .all(|r| r.attempts == 1 && r.model == "mock-model" && r.temperature == Some(0.0)));
}

#[tokio::test]
async fn concurrency_is_bounded() {
    let mock = Mock {
        delay: Duration::from_millis(40),
        ..Default::default()
    };
    let c = client(serve(mock.clone()).await, 2);
    let dir = tempfile::tempdir().unwrap();
    let mut opts = BenchOptions::new(Setting::Standard);
    opts.concurrency = 3;
    run_benchmark(&tasks(9), &opts, &c, &dir.path().join("r.jsonl"))
        .await
        .unwrap();
    let peak = mock.max_inflight.load(Ordering::SeqCst);
    assert!((2..=3).contains(&peak), "peak {peak}");
}

#[tokio::test]
async fn resume_only_sends_missing_tasks() {
    let mock = Mock::default();
    let c = client(serve(mock.clone()).await, 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let all = tasks(5);
    let mut opts = BenchOptions::new(Setting::Standard);
    run_benchmark(&all[..4], &opts, &c, &out).await.unwrap();
    assert_eq!(mock.hits.load(Ordering::SeqCst), 4);

    let e = run_benchmark(&all, &opts, &c, &out).await.unwrap_err();
    assert!(matches!(e, BenchError::ResultsExist(_)));

    opts.existing = Existing::Resume;
    let s = run_benchmark(&all, &opts, &c, &out).await.unwrap();
    assert_eq!(mock.hits.load(Ordering::SeqCst), 5);
    assert_eq!((s.requests_sent, s.resumed, s.overall.tasks), (1, 4, 5));
    assert_eq!(load_results(&out).unwrap().len(), 5);
}
