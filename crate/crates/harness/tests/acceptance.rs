//! Offline end-to-end run of the benchmark harness. Prints one line per
//! criterion; exits non-zero if any fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use p2_harness::bench::load_results;
use p2_harness::{run_benchmark, BenchOptions, EndpointConfig, Existing, HttpChatClient, Setting};
use perception_program::compile::{compile_depth, DepthField, DEFAULT_TAU};
use perception_program::ingest::{read_task_set, TaskKind};
use perception_program::model::ImageDims;
use perception_program::text::serialize;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

const TASKS: usize = 30;

/// Writes images, programs and a manifest; returns the answer key.
fn write_task_set(dir: &Path) -> HashMap<String, String> {
    let image = std::fs::read(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/image8.png"),
    )
    .unwrap();
    std::fs::write(dir.join("img.png"), image).unwrap();
    let dims = ImageDims::new(8, 8).unwrap();
    let field = DepthField::new(dims, (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
    std::fs::write(
        dir.join("depth.p2"),
        serialize(&compile_depth(&field, 3, DEFAULT_TAU).unwrap()).unwrap(),
    )
    .unwrap();

    let labels = ["A", "B", "C", "D"];
    let mut key = HashMap::new();
    let mut manifest = String::new();
    for i in 0..TASKS {
        let id = format!("task-{i:02}");
        let kind = TaskKind::ALL[i % TaskKind::ALL.len()];
        let answer = labels[(i * 7) % 4];
        let options: serde_json::Map<String, Value> = labels
            .iter()
            .map(|l| (l.to_string(), json!(format!("choice {l}"))))
            .collect();
        manifest.push_str(
            &json!({
                "id": id,
                "kind": kind.as_str(),
                "images": ["img.png"],
                "prompt": format!("[{id}] Which choice is right?"),
                "options": options,
                "answer": answer,
                "p2": ["depth.p2"],
            })
            .to_string(),
        );
        manifest.push('\n');
        key.insert(id, answer.to_string());
    }
    std::fs::write(dir.join("manifest.jsonl"), manifest).unwrap();
    key
}

async fn answer(
    State(key): State<Arc<HashMap<String, String>>>,
    Json(body): Json<Value>,
) -> Json<Value> {
    let text = body.to_string();
    let id = key
        .keys()
        .find(|id| text.contains(&format!("[{id}]")))
        .expect("task id in prompt");
    Json(json!({
        "choices": [{"message": {"role": "assistant", "content": format!("Reasoning...\nAnswer: ({})", key[id])}}],
        "usage": {"prompt_tokens": 100, "completion_tokens": 10}
    }))
}

async fn offline_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let key = Arc::new(write_task_set(dir.path()));
    let tasks = read_task_set(&dir.path().join("manifest.jsonl")).map_err(|e| e.to_string())?;

    let app = Router::new()
        .route("/v1/chat/completions", post(answer))
        .with_state(key.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
        .await
        .map_err(|e| e.to_string())?;
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    let client = HttpChatClient::with_key(EndpointConfig::new(url, "stub"), None)
        .map_err(|e| e.to_string())?;

    let out = dir.path().join("results.jsonl");
    let mut opts = BenchOptions::new(Setting::P2);
    let full = run_benchmark(&tasks, &opts, &client, &out)
        .await
        .map_err(|e| e.to_string())?;
    if full.overall.accuracy.map(|a| format!("{a:.2}")).as_deref() != Some("100.00") {
        return Err(format!("accuracy {:?}", full.overall.accuracy));
    }
    let records = load_results(&out).map_err(|e| e.to_string())?;
    let mut ids: Vec<&str> = records.iter().map(|r| r.task_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    if records.len() != TASKS || ids.len() != TASKS {
        return Err(format!(
            "{} records, {} distinct ids",
            records.len(),
            ids.len()
        ));
    }

    // Simulate an interrupted run: keep 20 lines plus half of the 21st.
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let torn = format!(
        "{}\n{}",
        lines[..20].join("\n"),
        &lines[20][..lines[20].len() / 2]
    );
    std::fs::write(&out, torn).unwrap();
    opts.existing = Existing::Resume;
    let resumed = run_benchmark(&tasks, &opts, &client, &out)
        .await
        .map_err(|e| e.to_string())?;
    if (resumed.requests_sent, resumed.resumed) != (10, 20) {
        return Err(format!(
            "resume sent {} and kept {}",
            resumed.requests_sent, resumed.resumed
        ));
    }
    let again = run_benchmark(&tasks, &opts, &client, &out)
        .await
        .map_err(|e| e.to_string())?;
    let final_records = load_results(&out).map_err(|e| e.to_string())?.len();
    if again.requests_sent != 0 || final_records != TASKS || again.overall.accuracy != Some(100.0) {
        return Err(format!(
            "second resume sent {} requests, {final_records} records",
            again.requests_sent
        ));
    }
    Ok(format!(
        "{TASKS} tasks, accuracy {:.2}, resume re-sent 10 of 30, complete resume sent 0",
        full.overall.accuracy.unwrap()
    ))
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let name = "harness offline end-to-end";
    let limit = Duration::from_secs(10);
    let start = Instant::now();
    let outcome = rt.block_on(offline_end_to_end());
    let took = start.elapsed();
    let outcome = match outcome {
        Ok(detail) if took > limit => Err(format!("{detail}; exceeded {limit:?}")),
        other => other,
    };
    let passed = outcome.is_ok();
    match outcome {
        Ok(detail) => println!(
            "PASS  {name}  [{:.2}s / {}s]  {detail}",
            took.as_secs_f64(),
            limit.as_secs()
        ),
        Err(why) => println!(
            "FAIL  {name}  [{:.2}s / {}s]  {why}",
            took.as_secs_f64(),
            limit.as_secs()
        ),
    }
    println!(
        "SKIP  published-model accuracy and naive baseline reproduction  needs benchmark data, tool exports and endpoint credentials"
    );
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
