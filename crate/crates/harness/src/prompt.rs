//! Prompt assembly for the three evaluation settings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use base64::Engine;
use perception_program::ingest::TaskKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-attachment limit, in bytes.
pub const DEFAULT_MAX_ATTACHMENT: usize = 20 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Standard,
    RawTool,
    P2,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Standard, Setting::RawTool, Setting::P2];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Standard => "standard",
            Setting::RawTool => "raw_tool",
            Setting::P2 => "p2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no template for {0}")]
    MissingTemplate(String),
    #[error("attachment {name} is {size} bytes, limit {limit}")]
    AttachmentTooLarge {
        name: String,
        size: usize,
        limit: usize,
    },
    #[error("{0}")]
    Precondition(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    BadExample { path: String, message: String },
}

/// An image sent inline with a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub name: String,
    pub media_type: String,
    pub data: Vec<u8>,
}

impl Attachment {
    /// Wrap raw bytes, sniffing the media type from magic bytes.
    pub fn from_bytes(name: impl Into<String>, data: Vec<u8>) -> Self {
        let media_type = sniff_media_type(&data).to_string();
        Self {
            name: name.into(),
            media_type,
            data,
        }
    }

    pub fn read(path: &Path) -> Result<Self, PromptError> {
        let data = std::fs::read(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_bytes(path.display().to_string(), data))
    }

    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

fn sniff_media_type(data: &[u8]) -> &'static str {
    if data.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if data.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if data.starts_with(b"GIF8") {
        "image/gif"
    } else if data.len() >= 12 && &data[..4] == b"RIFF" && &data[8..12] == b"WEBP" {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

/// One worked example shown before the question.
#[derive(Debug, Clone, PartialEq)]
pub struct IclExample {
    pub question: String,
    pub attachments: Vec<Attachment>,
    pub programs: Vec<String>,
    pub rationale: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub setting: Setting,
    pub kind: TaskKind,
    pub icl: Option<IclExample>,
    pub question: String,
    pub images: Vec<Attachment>,
    /// Serialized programs, used only in the P² setting.
    pub programs: Vec<String>,
    /// Tool visualizations, used only in the raw-tool setting.
    pub tool_images: Vec<Attachment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image(Attachment),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![Part::Text(text.into())],
        }
    }

    /// Concatenated text parts.
    pub fn text_content(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &Attachment> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image(a) => Some(a),
            Part::Text(_) => None,
        })
    }
}

/// Wrap a serialized program in a fenced block.
pub fn fence(program: &str) -> String {
    let body = program.trim_end_matches('\n');
    format!("```p2\n{body}\n```")
}

/// System prompts and optional worked examples, keyed by task kind and
/// setting.
///
/// A template directory holds `system.<setting>.txt` (all kinds),
/// `<kind>.<setting>.txt` (one kind, takes precedence), `recon.<modality>.txt`
/// and optional `<kind>.<setting>.icl.json` examples.
#[derive(Debug, Clone, Default)]
pub struct Templates {
    texts: BTreeMap<String, String>,
    icl: BTreeMap<String, IclExample>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IclDoc {
    question: String,
    #[serde(default)]
    images: Vec<String>,
    #[serde(default)]
    programs: Vec<String>,
    rationale: String,
    answer: String,
}

impl Templates {
    /// The templates shipped with the crate.
    pub fn builtin() -> Self {
        let mut t = Self::default();
        for (name, text) in [
            (
                "system.standard",
                include_str!("../templates/system.standard.txt"),
            ),
            (
                "system.raw_tool",
                include_str!("../templates/system.raw_tool.txt"),
            ),
            ("system.p2", include_str!("../templates/system.p2.txt")),
            ("recon.depth", include_str!("../templates/recon.depth.txt")),
            (
                "recon.visual_correspondence",
                include_str!("../templates/recon.visual_correspondence.txt"),
            ),
        ] {
            t.texts
                .insert(name.to_string(), text.trim_end().to_string());
        }
        t
    }

    /// Built-in templates overlaid with the files in `dir`.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let mut t = Self::builtin();
        let io = |path: &Path, source| PromptError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .collect::<Result<_, _>>()
            .map_err(|e| io(dir, e))?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if let Some(key) = name.strip_suffix(".icl.json") {
                let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
                let bad = |message: String| PromptError::BadExample {
                    path: path.display().to_string(),
                    message,
                };
                let doc: IclDoc = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let attachments = doc
                    .images
                    .iter()
                    .map(|p| Attachment::read(&base.join(p)))
                    .collect::<Result<_, _>>()?;
                t.icl.insert(
                    key.to_string(),
                    IclExample {
                        question: doc.question,
                        attachments,
                        programs: doc.programs,
                        rationale: doc.rationale,
                        answer: doc.answer,
                    },
                );
            } else if let Some(key) = name.strip_suffix(".txt") {
                let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
                t.texts.insert(key.to_string(), text.trim_end().to_string());
            }
        }
        Ok(t)
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.texts.insert(key.into(), text.into());
    }

    pub fn insert_icl(&mut self, kind: TaskKind, setting: Setting, example: IclExample) {
        self.icl.insert(format!("{kind}.{setting}"), example);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.texts.get(key).map(String::as_str)
    }

    pub fn system(&self, kind: TaskKind, setting: Setting) -> Result<&str, PromptError> {
        self.get(&format!("{kind}.{setting}"))
            .or_else(|| self.get(&format!("system.{setting}")))
            .ok_or_else(|| PromptError::MissingTemplate(format!("{kind} / {setting}")))
    }

    pub fn icl(&self, kind: TaskKind, setting: Setting) -> Option<&IclExample> {
        self.icl.get(&format!("{kind}.{setting}"))
    }
}

fn check_size(a: &Attachment, limit: usize) -> Result<(), PromptError> {
    if a.data.len() > limit {
        return Err(PromptError::AttachmentTooLarge {
            name: a.name.clone(),
            size: a.data.len(),
            limit,
        });
    }
    Ok(())
}

fn user_turn(
    question: &str,
    images: &[Attachment],
    programs: &[String],
    tool_images: &[Attachment],
    limit: usize,
) -> Result<Message, PromptError> {
    let mut parts = Vec::new();
    for a in images.iter().chain(tool_images) {
        check_size(a, limit)?;
        parts.push(Part::Image(a.clone()));
    }
    let mut text = question.trim_end().to_string();
    for p in programs {
        text.push_str("\n\n");
        text.push_str(&fence(p));
    }
    parts.push(Part::Text(text));
    Ok(Message {
        role: Role::User,
        parts,
    })
}

fn check_setting(
    setting: Setting,
    programs: usize,
    tools: usize,
    what: &str,
) -> Result<(), PromptError> {
    let fail = |m: String| Err(PromptError::Precondition(m));
    match setting {
        Setting::P2 if programs == 0 => {
            fail(format!("{what}: p2 setting needs at least one program"))
        }
        Setting::RawTool if tools == 0 => fail(format!(
            "{what}: raw_tool setting needs at least one tool image"
        )),
        Setting::Standard if programs + tools > 0 => fail(format!(
            "{what}: standard setting takes no programs or tool images"
        )),
        Setting::P2 if tools > 0 => fail(format!("{what}: p2 setting takes no tool images")),
        Setting::RawTool if programs > 0 => {
            fail(format!("{what}: raw_tool setting takes no programs"))
        }
        _ => Ok(()),
    }
}

/// Assemble the message list: system prompt, optional worked example as a
/// user/assistant pair, then the question with images and fenced programs.
pub fn build_prompt(
    spec: &PromptSpec,
    templates: &Templates,
    max_attachment: usize,
) -> Result<Vec<Message>, PromptError> {
    check_setting(
        spec.setting,
        spec.programs.len(),
        spec.tool_images.len(),
        "question",
    )?;
    let mut messages = vec![Message::text(
        Role::System,
        templates.system(spec.kind, spec.setting)?,
    )];
    if let Some(ex) = &spec.icl {
        let (programs, tools): (&[String], &[Attachment]) = match spec.setting {
            Setting::P2 => (&ex.programs, &[]),
            _ => (&[], &[]),
        };
        if spec.setting == Setting::P2 && programs.is_empty() {
            return Err(PromptError::Precondition(
                "example: p2 setting needs at least one program".into(),
            ));
        }
        messages.push(user_turn(
            &ex.question,
            &ex.attachments,
            programs,
            tools,
            max_attachment,
        )?);
        messages.push(Message::text(
            Role::Assistant,
            format!("{}\nAnswer: ({})", ex.rationale.trim_end(), ex.answer),
        ));
    }
    messages.push(user_turn(
        &spec.question,
        &spec.images,
        if spec.setting == Setting::P2 {
            &spec.programs
        } else {
            &[]
        },
        if spec.setting == Setting::RawTool {
            &spec.tool_images
        } else {
            &[]
        },
        max_attachment,
    )?);
    Ok(messages)
}
