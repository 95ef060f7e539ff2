//! Benchmark task manifests (JSONL, one task per line).

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultiView,
    RelativeDepth,
    VisualCorrespondence,
    Jigsaw,
    ObjectLocalization,
    SemanticCorrespondence,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::MultiView,
        TaskKind::RelativeDepth,
        TaskKind::VisualCorrespondence,
        TaskKind::Jigsaw,
        TaskKind::ObjectLocalization,
        TaskKind::SemanticCorrespondence,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::MultiView => "multi_view",
            TaskKind::RelativeDepth => "relative_depth",
            TaskKind::VisualCorrespondence => "visual_correspondence",
            TaskKind::Jigsaw => "jigsaw",
            TaskKind::ObjectLocalization => "object_localization",
            TaskKind::SemanticCorrespondence => "semantic_correspondence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An answer option: free text or a pixel coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OptionValue {
    Text(String),
    Point([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub kind: TaskKind,
    /// Image files, resolved against the manifest directory on read.
    pub images: Vec<PathBuf>,
    pub prompt: String,
    pub options: IndexMap<String, OptionValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Serialized programs for the P² setting.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p2: Vec<PathBuf>,
    /// Tool visualizations for the raw-tool setting.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_images: Vec<PathBuf>,
}

impl TaskInstance {
    pub fn option_labels(&self) -> Vec<&str> {
        self.options.keys().map(String::as_str).collect()
    }
}

fn at_line(line: usize, e: IngestError) -> IngestError {
    match e {
        IngestError::SchemaViolation { pointer, message } => IngestError::SchemaViolation {
            pointer,
            message: format!("line {line}: {message}"),
        },
        other => other,
    }
}

fn resolve(base: &Path, paths: &mut [PathBuf]) {
    for p in paths {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

/// Parse manifest text. Relative paths are joined onto `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<TaskInstance>, IngestError> {
    let mut tasks = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut task: TaskInstance =
            super::json::from_json(line.as_bytes()).map_err(|e| at_line(no, e))?;
        let fail = |pointer: &str, message: String| IngestError::SchemaViolation {
            pointer: pointer.into(),
            message: format!("line {no}: {message}"),
        };
        if task.id.is_empty() {
            return Err(fail("/id", "empty task id".into()));
        }
        if !ids.insert(task.id.clone()) {
            return Err(fail("/id", format!("duplicate task id `{}`", task.id)));
        }
        if task.options.is_empty() {
            return Err(fail("/options", "no options".into()));
        }
        if let Some(a) = &task.answer {
            if !task.options.contains_key(a) {
                return Err(fail("/answer", format!("answer `{a}` is not an option")));
            }
        }
        resolve(base, &mut task.images);
        resolve(base, &mut task.p2);
        resolve(base, &mut task.tool_images);
        tasks.push(task);
    }
    Ok(tasks)
}
