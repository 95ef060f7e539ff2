//! Benchmark runs: one request per task, results appended as JSONL.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use futures::stream::{self, StreamExt};
use perception_program::analysis::accuracy;
use perception_program::ingest::{OptionValue, TaskInstance, TaskKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ChatClient, ChatRequest};
use crate::extract::{extract_answer, UNPARSED};
use crate::prompt::{
    build_prompt, Attachment, PromptError, PromptSpec, Setting, Templates, DEFAULT_MAX_ATTACHMENT,
};

/// Default number of requests in flight.
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    CorruptResults {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0} already holds results; resume or overwrite it")]
    ResultsExist(PathBuf),
    #[error("concurrency must be at least 1")]
    ZeroConcurrency,
    #[error("duplicate task id `{0}`")]
    DuplicateTask(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub task_id: String,
    pub kind: TaskKind,
    pub setting: Setting,
    pub model: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub response: Option<String>,
    /// An option label, or `unparsed`.
    pub extracted: String,
    pub answer: Option<String>,
    pub correct: Option<bool>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub latency_ms: u64,
    pub attempts: u32,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Set when no usable response was obtained.
    pub error: Option<String>,
}

/// What to do with a results file that already has records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Existing {
    #[default]
    Fail,
    Resume,
    Overwrite,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub setting: Setting,
    pub concurrency: usize,
    pub existing: Existing,
    pub templates: Templates,
    pub max_attachment: usize,
    /// Attach the worked example for the task kind when one is configured.
    pub use_icl: bool,
}

impl BenchOptions {
    pub fn new(setting: Setting) -> Self {
        Self {
            setting,
            concurrency: DEFAULT_CONCURRENCY,
            existing: Existing::Fail,
            templates: Templates::builtin(),
            max_attachment: DEFAULT_MAX_ATTACHMENT,
            use_icl: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub tasks: usize,
    /// Tasks with an answer key.
    pub scored: usize,
    pub correct: usize,
    /// Percent over scored tasks, two decimals.
    pub accuracy: Option<f64>,
    pub failed: usize,
    pub unparsed: usize,
    pub mean_prompt_tokens: Option<f64>,
    pub mean_completion_tokens: Option<f64>,
    pub mean_total_tokens: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub setting: Setting,
    pub model: String,
    pub requests_sent: usize,
    pub resumed: usize,
    pub overall: GroupSummary,
    pub per_kind: BTreeMap<TaskKind, GroupSummary>,
}

impl BenchSummary {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "model {}  setting {}  requests {}  resumed {}\n",
            self.model, self.setting, self.requests_sent, self.resumed
        );
        out.push_str(&format!(
            "{:<26}{:>7}{:>8}{:>10}{:>8}{:>10}{:>12}\n",
            "kind", "tasks", "scored", "accuracy", "failed", "unparsed", "tokens/task"
        ));
        let fmt = |v: Option<f64>, d: usize| v.map_or("-".to_string(), |x| format!("{x:.d$}"));
        let rows = self
            .per_kind
            .iter()
            .map(|(k, g)| (k.as_str(), g))
            .chain(std::iter::once(("all", &self.overall)));
        for (name, g) in rows {
            out.push_str(&format!(
                "{:<26}{:>7}{:>8}{:>10}{:>8}{:>10}{:>12}\n",
                name,
                g.tasks,
                g.scored,
                fmt(g.accuracy, 2),
                g.failed,
                g.unparsed,
                fmt(g.mean_total_tokens, 1)
            ));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = Option<u64>>) -> Option<f64> {
    let v: Vec<u64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<u64>() as f64 / v.len() as f64)
}

fn summarize(records: &[&BenchmarkRecord]) -> GroupSummary {
    let scored: Vec<(String, String)> = records
        .iter()
        .filter(|r| r.answer.is_some())
        .map(|r| (r.task_id.clone(), r.extracted.clone()))
        .collect();
    let keys: Vec<(String, String)> = records
        .iter()
        .filter_map(|r| r.answer.as_ref().map(|a| (r.task_id.clone(), a.clone())))
        .collect();
    let acc = (!scored.is_empty())
        .then(|| accuracy(&scored, &keys).expect("every scored record has a key"));
    let total = |r: &&BenchmarkRecord| match (r.prompt_tokens, r.completion_tokens) {
        (None, None) => None,
        (p, c) => Some(p.unwrap_or(0) + c.unwrap_or(0)),
    };
    GroupSummary {
        tasks: records.len(),
        scored: scored.len(),
        correct: records.iter().filter(|r| r.correct == Some(true)).count(),
        accuracy: acc,
        failed: records.iter().filter(|r| r.error.is_some()).count(),
        unparsed: records
            .iter()
            .filter(|r| r.error.is_none() && r.extracted == UNPARSED)
            .count(),
        mean_prompt_tokens: mean(records.iter().map(|r| r.prompt_tokens)),
        mean_completion_tokens: mean(records.iter().map(|r| r.completion_tokens)),
        mean_total_tokens: mean(records.iter().map(total)),
    }
}

/// Overall and per-kind summaries of a set of records.
pub fn summarize_records(
    records: &[&BenchmarkRecord],
) -> (GroupSummary, BTreeMap<TaskKind, GroupSummary>) {
    let mut per_kind = BTreeMap::new();
    for kind in TaskKind::ALL {
        let group: Vec<&BenchmarkRecord> =
            records.iter().copied().filter(|r| r.kind == kind).collect();
        if !group.is_empty() {
            per_kind.insert(kind, summarize(&group));
        }
    }
    (summarize(records), per_kind)
}

/// Question text with the options listed after it.
pub fn question_text(task: &TaskInstance) -> String {
    let mut q = task.prompt.trim_end().to_string();
    q.push_str("\n\nOptions:");
    for (label, value) in &task.options {
        match value {
            OptionValue::Text(t) => q.push_str(&format!("\n({label}) {t}")),
            OptionValue::Point([x, y]) => q.push_str(&format!("\n({label}) [{x}, {y}]")),
        }
    }
    q
}

/// Load the files a task needs for `setting` and assemble its prompt spec.
pub fn task_spec(
    task: &TaskInstance,
    setting: Setting,
    templates: &Templates,
    use_icl: bool,
) -> Result<PromptSpec, PromptError> {
    let images = task
        .images
        .iter()
        .map(|p| Attachment::read(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut programs = Vec::new();
    let mut tool_images = Vec::new();
    match setting {
        Setting::P2 => {
            for path in &task.p2 {
                let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                perception_program::text::parse(&text)
                    .map_err(|e| PromptError::Precondition(format!("{}: {e}", path.display())))?;
                programs.push(text);
            }
        }
        Setting::RawTool => {
            for p in &task.tool_images {
                tool_images.push(Attachment::read(p)?);
            }
        }
        Setting::Standard => {}
    }
    Ok(PromptSpec {
        setting,
        kind: task.kind,
        icl: if use_icl {
            templates.icl(task.kind, setting).cloned()
        } else {
            None
        },
        question: question_text(task),
        images,
        programs,
        tool_images,
    })
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read finished records, cutting off a torn final line left by a crash.
pub fn load_results(path: &Path) -> Result<Vec<BenchmarkRecord>, BenchError> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io(path))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        file.set_len(complete as u64).map_err(io(path))?;
        file.seek(SeekFrom::End(0)).map_err(io(path))?;
    }
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| BenchError::CorruptResults {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| BenchError::CorruptResults {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: BenchmarkRecord = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if !seen.insert(r.task_id.clone()) {
            return Err(corrupt(format!("second record for task `{}`", r.task_id)));
        }
        records.push(r);
    }
    Ok(records)
}

/// Sibling paths `<stem>.summary.json` and `<stem>.summary.txt`.
pub fn summary_paths(results: &Path) -> (PathBuf, PathBuf) {
    (
        results.with_extension("summary.json"),
        results.with_extension("summary.txt"),
    )
}

async fn run_one<C: ChatClient>(
    task: &TaskInstance,
    opts: &BenchOptions,
    client: &C,
) -> BenchmarkRecord {
    let labels = task.option_labels();
    let mut record = BenchmarkRecord {
        task_id: task.id.clone(),
        kind: task.kind,
        setting: opts.setting,
        model: client.model().to_string(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        response: None,
        extracted: UNPARSED.to_string(),
        answer: task.answer.clone(),
        correct: task.answer.as_ref().map(|_| false),
        prompt_tokens: None,
        completion_tokens: None,
        latency_ms: 0,
        attempts: 0,
        temperature: client.temperature(),
        max_tokens: client.max_tokens(),
        error: None,
    };
    let messages = match task_spec(task, opts.setting, &opts.templates, opts.use_icl)
        .and_then(|spec| build_prompt(&spec, &opts.templates, opts.max_attachment))
    {
        Ok(m) => m,
        Err(e) => {
            record.error = Some(format!("prompt: {e}"));
            return record;
        }
    };
    let start = Instant::now();
    let reply = client
        .complete(&ChatRequest {
            tag: task.id.clone(),
            messages,
        })
        .await;
    record.latency_ms = start.elapsed().as_millis() as u64;
    match reply {
        Ok(r) => {
            let label = extract_answer(&r.text, &labels);
            record.correct = task.answer.as_ref().map(|a| label.as_ref() == Some(a));
            record.extracted = label.unwrap_or_else(|| UNPARSED.to_string());
            record.response = Some(r.text);
            record.prompt_tokens = r.prompt_tokens;
            record.completion_tokens = r.completion_tokens;
            record.attempts = r.attempts;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Run every task not already in `results`, at most `concurrency` requests
/// at a time, appending one line per finished task. Writes the summary next
/// to the results file and returns it.
pub async fn run_benchmark<C: ChatClient>(
    tasks: &[TaskInstance],
    opts: &BenchOptions,
    client: &C,
    results: &Path,
) -> Result<BenchSummary, BenchError> {
    if opts.concurrency == 0 {
        return Err(BenchError::ZeroConcurrency);
    }
    let mut ids = HashSet::new();
    for t in tasks {
        if !ids.insert(t.id.as_str()) {
            return Err(BenchError::DuplicateTask(t.id.clone()));
        }
    }
    let mut previous = match opts.existing {
        Existing::Overwrite => Vec::new(),
        _ => load_results(results)?,
    };
    if opts.existing == Existing::Fail && !previous.is_empty() {
        return Err(BenchError::ResultsExist(results.to_path_buf()));
    }
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut file: File = OpenOptions::new()
        .create(true)
        .append(opts.existing != Existing::Overwrite)
        .write(true)
        .truncate(opts.existing == Existing::Overwrite)
        .open(results)
        .map_err(io(results))?;

    let done: HashSet<String> = previous.iter().map(|r| r.task_id.clone()).collect();
    let pending: Vec<&TaskInstance> = tasks.iter().filter(|t| !done.contains(&t.id)).collect();
    let requests_sent = pending.len();
    let resumed = tasks.len() - pending.len();

    let mut finished = stream::iter(pending)
        .map(|task| run_one(task, opts, client))
        .buffer_unordered(opts.concurrency);
    // Single writer: records arrive here one at a time and each goes out as
    // one write of one line.
    while let Some(record) = finished.next().await {
        let mut line = serde_json::to_string(&record).expect("records serialize");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io(results))?;
        previous.push(record);
    }
    file.flush().map_err(io(results))?;

    let by_id: HashMap<&str, &BenchmarkRecord> =
        previous.iter().map(|r| (r.task_id.as_str(), r)).collect();
    let in_run: Vec<&BenchmarkRecord> = tasks
        .iter()
        .filter_map(|t| by_id.get(t.id.as_str()).copied())
        .collect();
    let (overall, per_kind) = summarize_records(&in_run);
    let summary = BenchSummary {
        setting: opts.setting,
        model: client.model().to_string(),
        requests_sent,
        resumed,
        overall,
        per_kind,
    };
    let (json_path, text_path) = summary_paths(results);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(&json_path, json).map_err(io(&json_path))?;
    std::fs::write(&text_path, summary.to_text()).map_err(io(&text_path))?;
    Ok(summary)
}
