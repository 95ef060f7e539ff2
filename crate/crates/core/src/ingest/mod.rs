//! Readers for tool outputs and task data.
//!
//! Every reader loads the whole file after checking it against a size limit
//! (64 MiB unless configured through [`Reader`]). Formats are detected from
//! magic bytes, not file extensions.

pub mod arrays;
pub mod json;
pub mod tasks;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::compile::{
    CandidateScoreSet, CompileError, DepthField, DetectionSet, FlowField, LabeledPoints, MatchSet,
};
use crate::model::ImageDims;
use crate::raster::Raster;
pub use arrays::{decode_flo, encode_flo, encode_npy_f32, encode_pfm, FloData};
pub use tasks::{OptionValue, TaskInstance, TaskKind};

pub const DEFAULT_MAX_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {size} bytes exceeds the {limit}-byte limit")]
    TooLarge {
        path: PathBuf,
        size: u64,
        limit: u64,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("bad magic bytes, expected {0}")]
    BadMagic(String),
    #[error("truncated file: need {expected} bytes, have {got}")]
    TruncatedFile { expected: usize, got: usize },
    #[error("schema violation at `{pointer}`: {message}")]
    SchemaViolation { pointer: String, message: String },
    #[error(transparent)]
    Field(#[from] CompileError),
}

/// Orientation of the values in a depth file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthConvention {
    #[default]
    NearerIsLarger,
    FartherIsLarger,
}

impl DepthConvention {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nearer_is_larger" => Some(Self::NearerIsLarger),
            "farther_is_larger" => Some(Self::FartherIsLarger),
            _ => None,
        }
    }
}

/// Raw depth values and their image shape, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawField {
    pub dims: ImageDims,
    pub values: Vec<f64>,
}

fn dims_of(shape: &[usize]) -> Result<ImageDims, IngestError> {
    let (h, w) = match shape {
        [h, w] => (*h, *w),
        other => {
            return Err(IngestError::UnsupportedFormat(format!(
                "expected a 2-D array, got shape {other:?}"
            )))
        }
    };
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| IngestError::CorruptFile(format!("dimension {v} too large")))
    };
    ImageDims::new(to_u32(w)?, to_u32(h)?).map_err(|e| IngestError::CorruptFile(e.to_string()))
}

/// Decode a depth map (NPY, PFM or grayscale PNG) without normalizing it.
pub fn decode_depth_raw(bytes: &[u8]) -> Result<RawField, IngestError> {
    let (dims, values) = if bytes.starts_with(arrays::NPY_MAGIC) {
        let a = arrays::decode_npy(bytes)?;
        (dims_of(&a.shape)?, a.data)
    } else if bytes.starts_with(b"Pf") || bytes.starts_with(b"PF") {
        let a = arrays::decode_pfm(bytes)?;
        (dims_of(&a.shape)?, a.data)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_gray_png(bytes)?
    } else {
        return Err(IngestError::UnsupportedFormat(
            "depth must be NPY, PFM or grayscale PNG".into(),
        ));
    };
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(IngestError::CorruptFile(format!(
            "non-finite depth at index {index}"
        )));
    }
    Ok(RawField { dims, values })
}

fn decode_gray_png(bytes: &[u8]) -> Result<(ImageDims, Vec<f64>), IngestError> {
    use image::DynamicImage;
    let img =
        image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(image_error)?;
    let values: Vec<f64> = match &img {
        DynamicImage::ImageLuma16(buf) => buf.as_raw().iter().map(|&v| f64::from(v)).collect(),
        DynamicImage::ImageLuma8(buf) => buf.as_raw().iter().map(|&v| f64::from(v)).collect(),
        _ => {
            return Err(IngestError::UnsupportedFormat(
                "depth PNG must be single-channel grayscale".into(),
            ))
        }
    };
    let dims = ImageDims::new(img.width(), img.height())
        .map_err(|e| IngestError::CorruptFile(e.to_string()))?;
    Ok((dims, values))
}

/// Min-max normalize into `[0, 1]` (all `0.5` for a constant field), then
/// flip when larger raw values mean farther away.
pub fn normalize_depth(
    raw: RawField,
    convention: DepthConvention,
) -> Result<DepthField, IngestError> {
    let min = raw.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let values = raw
        .values
        .iter()
        .map(|&v| {
            let n = if span > 0.0 {
                ((v - min) / span).clamp(0.0, 1.0)
            } else {
                0.5
            };
            match convention {
                DepthConvention::NearerIsLarger => n,
                DepthConvention::FartherIsLarger => 1.0 - n,
            }
        })
        .collect();
    Ok(DepthField::new(raw.dims, values)?)
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField, IngestError> {
    if bytes.starts_with(arrays::NPY_MAGIC) {
        let a = arrays::decode_npy(bytes)?;
        let [h, w, 2] = a.shape[..] else {
            return Err(IngestError::UnsupportedFormat(format!(
                "flow NPY must have shape (H, W, 2), got {:?}",
                a.shape
            )));
        };
        let dims = dims_of(&[h, w])?;
        let u = a.data.iter().step_by(2).copied().collect();
        let v = a.data.iter().skip(1).step_by(2).copied().collect();
        return Ok(FlowField::new(dims, u, v)?);
    }
    let flo = arrays::decode_flo(bytes)?;
    let dims = dims_of(&[flo.height, flo.width])?;
    let widen = |c: &[f32]| c.iter().map(|&x| f64::from(x)).collect();
    Ok(FlowField::new(dims, widen(&flo.u), widen(&flo.v))?)
}

fn image_error(e: image::ImageError) -> IngestError {
    match e {
        image::ImageError::Unsupported(u) => IngestError::UnsupportedFormat(u.to_string()),
        other => IngestError::CorruptFile(other.to_string()),
    }
}

/// Decode a PNG or JPEG into RGB samples in `[0, 1]`. 16-bit PNGs keep their
/// full precision.
pub fn decode_image(bytes: &[u8]) -> Result<Raster, IngestError> {
    let format = image::guess_format(bytes).map_err(image_error)?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(IngestError::UnsupportedFormat(format!("{format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(image_error)?;
    let (w, h) = (img.width(), img.height());
    let data: Vec<f64> = match img.color().bytes_per_pixel() / img.color().channel_count() {
        1 => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 255.0)
            .collect(),
        _ => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
    };
    Raster::new(w, h, data).map_err(|e| IngestError::CorruptFile(e.to_string()))
}

/// File readers sharing one size limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reader {
    pub max_bytes: u64,
}

impl Default for Reader {
    fn default() -> Self {
        Self {
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

impl Reader {
    pub fn with_limit(max_bytes: u64) -> Self {
        Self { max_bytes }
    }

    /// Read a whole file, refusing anything over the limit.
    pub fn read_bytes(&self, path: &Path) -> Result<Vec<u8>, IngestError> {
        let io = |source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        };
        let size = std::fs::metadata(path).map_err(io)?.len();
        if size > self.max_bytes {
            return Err(IngestError::TooLarge {
                path: path.to_path_buf(),
                size,
                limit: self.max_bytes,
            });
        }
        std::fs::read(path).map_err(io)
    }

    pub fn read_depth(
        &self,
        path: &Path,
        convention: DepthConvention,
    ) -> Result<DepthField, IngestError> {
        normalize_depth(decode_depth_raw(&self.read_bytes(path)?)?, convention)
    }

    pub fn read_flow(&self, path: &Path) -> Result<FlowField, IngestError> {
        decode_flow(&self.read_bytes(path)?)
    }

    pub fn read_matches(&self, path: &Path) -> Result<MatchSet, IngestError> {
        json::parse_matches(&self.read_bytes(path)?)
    }

    pub fn read_detections(&self, path: &Path) -> Result<DetectionSet, IngestError> {
        json::parse_detections(&self.read_bytes(path)?)
    }

    pub fn read_candidates(&self, path: &Path) -> Result<CandidateScoreSet, IngestError> {
        json::parse_candidates(&self.read_bytes(path)?)
    }

    pub fn read_points(&self, path: &Path) -> Result<LabeledPoints, IngestError> {
        json::parse_points(&self.read_bytes(path)?)
    }

    pub fn read_image(&self, path: &Path) -> Result<Raster, IngestError> {
        decode_image(&self.read_bytes(path)?)
    }

    /// Read a JSONL manifest, or `manifest.jsonl` inside a directory.
    pub fn read_task_set(&self, path: &Path) -> Result<Vec<TaskInstance>, IngestError> {
        let file = if path.is_dir() {
            path.join("manifest.jsonl")
        } else {
            path.to_path_buf()
        };
        let bytes = self.read_bytes(&file)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| IngestError::SchemaViolation {
            pointer: String::new(),
            message: format!("manifest is not UTF-8: {e}"),
        })?;
        let base = file.parent().unwrap_or(Path::new("."));
        tasks::parse_manifest(text, base)
    }
}

pub fn read_depth(path: &Path, convention: DepthConvention) -> Result<DepthField, IngestError> {
    Reader::default().read_depth(path, convention)
}

pub fn read_flow(path: &Path) -> Result<FlowField, IngestError> {
    Reader::default().read_flow(path)
}

pub fn read_matches(path: &Path) -> Result<MatchSet, IngestError> {
    Reader::default().read_matches(path)
}

pub fn read_detections(path: &Path) -> Result<DetectionSet, IngestError> {
    Reader::default().read_detections(path)
}

pub fn read_candidates(path: &Path) -> Result<CandidateScoreSet, IngestError> {
    Reader::default().read_candidates(path)
}

pub fn read_points(path: &Path) -> Result<LabeledPoints, IngestError> {
    Reader::default().read_points(path)
}

pub fn read_image(path: &Path) -> Result<Raster, IngestError> {
    Reader::default().read_image(path)
}

pub fn read_task_set(path: &Path) -> Result<Vec<TaskInstance>, IngestError> {
    Reader::default().read_task_set(path)
}
