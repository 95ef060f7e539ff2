//! Redaction-reconstruction runs: show exemplar image/program pairs, hand the
//! model a program with its readouts removed, and score what comes back.

use futures::stream::{self, StreamExt};
use perception_program::analysis::{
    displacement_error_stats, kendall_tau, ranking_from_depth, AnalysisError, DisplacementRow,
};
use perception_program::compile::{
    compile_depth, compile_visual_correspondence, DepthField, MatchSet,
};
use perception_program::ingest::{DepthConvention, Reader};
use perception_program::model::{redact_readouts, Modality, PerceptionProgram};
use perception_program::text::{extract_block, parse, serialize};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::client::{ChatClient, ChatRequest};
use crate::prompt::{fence, Attachment, Message, Part, Role, Templates, DEFAULT_MAX_ATTACHMENT};

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("tasks mix depth and correspondence truths")]
    MixedModalities,
    #[error("no template `{0}`")]
    MissingTemplate(String),
    #[error("concurrency must be at least 1")]
    ZeroConcurrency,
    #[error("depth reconstruction needs at least one grid order")]
    NoGrids,
    #[error("exemplar {id}: {message}")]
    Exemplar { id: String, message: String },
    #[error("{path}:{line}: {message}")]
    BadTaskFile {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconTruth {
    Depth(DepthField),
    Correspondence(MatchSet),
}

impl ReconTruth {
    fn modality(&self) -> Modality {
        match self {
            ReconTruth::Depth(_) => Modality::Depth,
            ReconTruth::Correspondence(_) => Modality::VisualCorrespondence,
        }
    }

    fn compile(&self, grid: Option<u32>, tau: f64) -> Result<PerceptionProgram, String> {
        match (self, grid) {
            (ReconTruth::Depth(f), Some(p)) => compile_depth(f, p, tau).map_err(|e| e.to_string()),
            (ReconTruth::Correspondence(m), _) => {
                compile_visual_correspondence(m).map_err(|e| e.to_string())
            }
            (ReconTruth::Depth(_), None) => Err("depth needs a grid order".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconTask {
    pub id: String,
    pub images: Vec<Attachment>,
    pub truth: ReconTruth,
}

#[derive(Debug, Clone)]
pub struct ReconOptions {
    /// Grid orders to sweep (depth only).
    pub grids: Vec<u32>,
    pub tau: f64,
    pub concurrency: usize,
    pub templates: Templates,
    pub max_attachment: usize,
}

impl Default for ReconOptions {
    fn default() -> Self {
        Self {
            grids: vec![3, 4, 5, 6, 8, 10, 12, 16],
            tau: perception_program::compile::DEFAULT_TAU,
            concurrency: crate::bench::DEFAULT_CONCURRENCY,
            templates: Templates::builtin(),
            max_attachment: DEFAULT_MAX_ATTACHMENT,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskLine {
    id: String,
    #[serde(default)]
    images: Vec<PathBuf>,
    depth: Option<PathBuf>,
    #[serde(default)]
    convention: Option<String>,
    matches: Option<PathBuf>,
}

/// Read a reconstruction task file: JSONL, or `recon.jsonl` inside a
/// directory. Each line is `{"id", "images", "depth", "convention"?}` or
/// `{"id", "images", "matches"}`; paths are relative to the file.
pub fn read_recon_tasks(path: &Path, reader: &Reader) -> Result<Vec<ReconTask>, ReconError> {
    let file = if path.is_dir() {
        path.join("recon.jsonl")
    } else {
        path.to_path_buf()
    };
    let shown = file.display().to_string();
    let bad = |line: usize, message: String| ReconError::BadTaskFile {
        path: shown.clone(),
        line,
        message,
    };
    let bytes = reader
        .read_bytes(&file)
        .map_err(|e| bad(0, e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| bad(0, e.to_string()))?;
    let base = file.parent().unwrap_or(Path::new("."));
    let mut tasks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let t: TaskLine = serde_json::from_str(raw).map_err(|e| bad(line, e.to_string()))?;
        let images = t
            .images
            .iter()
            .map(|p| Attachment::read(&base.join(p)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(line, e.to_string()))?;
        let truth = match (t.depth, t.matches) {
            (Some(d), None) => {
                let convention = match t.convention.as_deref() {
                    None => DepthConvention::default(),
                    Some(c) => DepthConvention::parse(c)
                        .ok_or_else(|| bad(line, format!("unknown convention `{c}`")))?,
                };
                ReconTruth::Depth(
                    reader
                        .read_depth(&base.join(d), convention)
                        .map_err(|e| bad(line, e.to_string()))?,
                )
            }
            (None, Some(m)) => {
                if t.convention.is_some() {
                    return Err(bad(line, "`convention` applies to depth only".into()));
                }
                ReconTruth::Correspondence(
                    reader
                        .read_matches(&base.join(m))
                        .map_err(|e| bad(line, e.to_string()))?,
                )
            }
            _ => {
                return Err(bad(
                    line,
                    "exactly one of `depth` or `matches` is required".into(),
                ))
            }
        };
        tasks.push(ReconTask {
            id: t.id,
            images,
            truth,
        });
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconRecord {
    pub task_id: String,
    pub grid: Option<u32>,
    pub ok: bool,
    pub error: Option<String>,
    pub kendall_tau: Option<f64>,
    pub rows: Vec<DisplacementRow>,
    pub response: Option<String>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub grid: Option<u32>,
    pub tasks: usize,
    pub parsed: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub mean_tau: Option<f64>,
    pub median_tau: Option<f64>,
    /// Correspondence only, pooled over every match of every parsed task.
    pub mean_displacement: Option<f64>,
    pub mean_error: Option<f64>,
    pub median_error: Option<f64>,
    pub copied_input_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconReport {
    #[serde(serialize_with = "modality_name")]
    pub modality: Modality,
    pub model: String,
    pub records: Vec<ReconRecord>,
    pub table: Vec<GridRow>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    })
}

fn modality_name<S: serde::Serializer>(m: &Modality, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(m)
}

impl ReconReport {
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut out = format!("model {}  modality {}\n", self.model, self.modality);
        match self.modality {
            Modality::Depth => {
                out.push_str(&format!(
                    "{:>6}{:>7}{:>8}{:>10}{:>10}{:>10}\n",
                    "grid", "tasks", "parsed", "fail%", "mean_tau", "med_tau"
                ));
                for r in &self.table {
                    out.push_str(&format!(
                        "{:>6}{:>7}{:>8}{:>10.2}{:>10}{:>10}\n",
                        r.grid.map_or("-".into(), |g| format!("{g}x{g}")),
                        r.tasks,
                        r.parsed,
                        100.0 * r.failure_rate,
                        fmt(r.mean_tau),
                        fmt(r.median_tau)
                    ));
                }
            }
            _ => {
                out.push_str(&format!(
                    "{:>7}{:>8}{:>10}{:>12}{:>10}{:>10}{:>9}\n",
                    "tasks", "parsed", "fail%", "mean_disp%", "mean_err%", "med_err%", "copied"
                ));
                for r in &self.table {
                    out.push_str(&format!(
                        "{:>7}{:>8}{:>10.2}{:>12}{:>10}{:>10}{:>9}\n",
                        r.tasks,
                        r.parsed,
                        100.0 * r.failure_rate,
                        fmt(r.mean_displacement),
                        fmt(r.mean_error),
                        fmt(r.median_error),
                        fmt(r.copied_input_fraction)
                    ));
                }
            }
        }
        out
    }
}

fn prompt_for(
    system: &str,
    exemplars: &[(&ReconTask, String)],
    task: &ReconTask,
    redacted: &str,
    limit: usize,
) -> Result<Vec<Message>, String> {
    let mut parts = Vec::new();
    let push_images = |parts: &mut Vec<Part>, images: &[Attachment]| -> Result<(), String> {
        for a in images {
            if a.data.len() > limit {
                return Err(format!(
                    "attachment {} is {} bytes, limit {limit}",
                    a.name,
                    a.data.len()
                ));
            }
            parts.push(Part::Image(a.clone()));
        }
        Ok(())
    };
    for (i, (ex, program)) in exemplars.iter().enumerate() {
        parts.push(Part::Text(format!("Example {}:", i + 1)));
        push_images(&mut parts, &ex.images)?;
        parts.push(Part::Text(fence(program)));
    }
    parts.push(Part::Text(
        "Complete this program for the following image:".into(),
    ));
    push_images(&mut parts, &task.images)?;
    parts.push(Part::Text(fence(redacted)));
    Ok(vec![
        Message::text(Role::System, system),
        Message {
            role: Role::User,
            parts,
        },
    ])
}

fn score(
    truth: &ReconTruth,
    expected: &PerceptionProgram,
    reply: &str,
) -> Result<(Option<f64>, Vec<DisplacementRow>), String> {
    let got = parse(extract_block(reply)).map_err(|e| format!("unparseable completion: {e}"))?;
    if got.modality != expected.modality {
        return Err(format!("completion has modality {}", got.modality));
    }
    let expected_ids: Vec<&str> = expected.items.iter().map(|i| i.id.as_str()).collect();
    let got_ids: Vec<&str> = got.items.iter().map(|i| i.id.as_str()).collect();
    if expected_ids != got_ids {
        return Err("completion items differ from the prompt".into());
    }
    let analysis = |e: AnalysisError| e.to_string();
    match truth {
        ReconTruth::Depth(_) => {
            // The truth is compared as the model would have seen it: quantized.
            let truth_rank = ranking_from_depth(&expected.quantized()).map_err(analysis)?;
            let got_rank = ranking_from_depth(&got).map_err(analysis)?;
            Ok((
                Some(kendall_tau(&got_rank, &truth_rank).map_err(analysis)?),
                Vec::new(),
            ))
        }
        ReconTruth::Correspondence(ms) => Ok((
            None,
            displacement_error_stats(ms, &got).map_err(analysis)?.rows,
        )),
    }
}

async fn run_job<C: ChatClient>(
    task: &ReconTask,
    grid: Option<u32>,
    system: &str,
    exemplars: &[(&ReconTask, String)],
    opts: &ReconOptions,
    client: &C,
) -> ReconRecord {
    let mut record = ReconRecord {
        task_id: task.id.clone(),
        grid,
        ok: false,
        error: None,
        kendall_tau: None,
        rows: Vec::new(),
        response: None,
        prompt_tokens: None,
        completion_tokens: None,
    };
    let prepared = task.truth.compile(grid, opts.tau).and_then(|truth| {
        let redacted = serialize(&redact_readouts(&truth)).map_err(|e| e.to_string())?;
        let messages = prompt_for(system, exemplars, task, &redacted, opts.max_attachment)?;
        Ok((truth, messages))
    });
    let (truth, messages) = match prepared {
        Ok(v) => v,
        Err(e) => {
            record.error = Some(e);
            return record;
        }
    };
    let tag = match grid {
        Some(p) => format!("{}@{p}", task.id),
        None => task.id.clone(),
    };
    match client.complete(&ChatRequest { tag, messages }).await {
        Ok(r) => {
            match score(&task.truth, &truth, &r.text) {
                Ok((tau, rows)) => {
                    record.ok = true;
                    record.kendall_tau = tau;
                    record.rows = rows;
                }
                Err(e) => record.error = Some(e),
            }
            record.response = Some(r.text);
            record.prompt_tokens = r.prompt_tokens;
            record.completion_tokens = r.completion_tokens;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn grid_row(grid: Option<u32>, records: &[&ReconRecord]) -> GridRow {
    let parsed: Vec<&&ReconRecord> = records.iter().filter(|r| r.ok).collect();
    let taus: Vec<f64> = parsed.iter().filter_map(|r| r.kendall_tau).collect();
    let rows: Vec<&DisplacementRow> = parsed.iter().flat_map(|r| &r.rows).collect();
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let disp: Vec<f64> = rows.iter().map(|r| r.displacement).collect();
    let failures = records.len() - parsed.len();
    GridRow {
        grid,
        tasks: records.len(),
        parsed: parsed.len(),
        failures,
        failure_rate: if records.is_empty() {
            0.0
        } else {
            failures as f64 / records.len() as f64
        },
        mean_tau: mean(&taus),
        median_tau: median(&taus),
        mean_displacement: mean(&disp),
        mean_error: mean(&errors),
        median_error: median(&errors),
        copied_input_fraction: (!rows.is_empty())
            .then(|| rows.iter().filter(|r| r.copied_input).count() as f64 / rows.len() as f64),
    }
}

/// Run every task at every grid order (depth) or once (correspondence).
/// Records come back ordered by grid, then task.
pub async fn run_reconstruction<C: ChatClient>(
    tasks: &[ReconTask],
    exemplars: &[ReconTask],
    opts: &ReconOptions,
    client: &C,
) -> Result<ReconReport, ReconError> {
    if opts.concurrency == 0 {
        return Err(ReconError::ZeroConcurrency);
    }
    let modality = tasks
        .iter()
        .chain(exemplars)
        .map(|t| t.truth.modality())
        .try_fold(None, |acc: Option<Modality>, m| match acc {
            Some(a) if a != m => Err(ReconError::MixedModalities),
            _ => Ok(Some(m)),
        })?
        .unwrap_or(Modality::Depth);
    let grids: Vec<Option<u32>> = match modality {
        Modality::Depth if opts.grids.is_empty() => return Err(ReconError::NoGrids),
        Modality::Depth => opts.grids.iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    let key = format!("recon.{modality}");
    let system = opts
        .templates
        .get(&key)
        .ok_or_else(|| ReconError::MissingTemplate(key.clone()))?
        .to_string();

    let mut compiled = Vec::with_capacity(grids.len());
    for &grid in &grids {
        let mut shown = Vec::with_capacity(exemplars.len());
        for ex in exemplars {
            let text = ex
                .truth
                .compile(grid, opts.tau)
                .and_then(|pp| serialize(&pp).map_err(|e| e.to_string()))
                .map_err(|message| ReconError::Exemplar {
                    id: ex.id.clone(),
                    message,
                })?;
            shown.push((ex, text));
        }
        compiled.push(shown);
    }

    let jobs: Vec<(usize, usize)> = (0..grids.len())
        .flat_map(|g| (0..tasks.len()).map(move |t| (g, t)))
        .collect();
    let mut done: Vec<((usize, usize), ReconRecord)> = stream::iter(jobs)
        .map(|(g, t)| {
            let (system, shown, grid) = (&system, &compiled[g], grids[g]);
            async move {
                (
                    (g, t),
                    run_job(&tasks[t], grid, system, shown, opts, client).await,
                )
            }
        })
        .buffer_unordered(opts.concurrency)
        .collect()
        .await;
    done.sort_by_key(|(k, _)| *k);
    let records: Vec<ReconRecord> = done.into_iter().map(|(_, r)| r).collect();
    let table = grids
        .iter()
        .map(|&g| {
            let group: Vec<&ReconRecord> = records.iter().filter(|r| r.grid == g).collect();
            grid_row(g, &group)
        })
        .collect();
    Ok(ReconReport {
        modality,
        model: client.model().to_string(),
        records,
        table,
    })
}
