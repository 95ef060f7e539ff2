//! Run settings file. Every key is optional; command-line flags win.
//!
//! ```toml
//! grid = 8
//! tau = 0.05
//! axis = "horizontal"
//! strip_width = 12
//! anchor = "auto"
//! depth_convention = "nearer_is_larger"
//! camera_convention = "camera_opposes_flow"
//! setting = "p2"
//! concurrency = 4
//! templates = "prompts/"
//! grids = [3, 4, 5, 6, 8]
//!
//! [endpoint]
//! url = "https://api.openai.com/v1/chat/completions"
//! model = "gpt-4o"
//! ```

use std::path::{Path, PathBuf};

use p2_harness::EndpointConfig;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: Option<u32>,
    pub grids: Option<Vec<u32>>,
    pub tau: Option<f64>,
    pub axis: Option<String>,
    pub strip_width: Option<u32>,
    pub anchor: Option<String>,
    pub depth_convention: Option<String>,
    pub camera_convention: Option<String>,
    pub setting: Option<String>,
    pub concurrency: Option<usize>,
    pub templates: Option<PathBuf>,
    pub max_attachment_bytes: Option<usize>,
    pub endpoint: Option<EndpointConfig>,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = cfg.templates.take() {
            cfg.templates = Some(base.join(t));
        }
        if let Some(e) = &cfg.endpoint {
            if e.max_attempts == 0 {
                return Err(format!(
                    "{}: endpoint.max_attempts must be at least 1",
                    path.display()
                ));
            }
        }
        Ok(cfg)
    }
}
