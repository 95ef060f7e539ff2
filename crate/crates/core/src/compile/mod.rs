//! Modality compilers: raw tool output in, [`PerceptionProgram`] out.
//!
//! Every compiler follows the same shape: pick the primitives, locate each
//! one in normalized space, read the modality on its support, attach an
//! optional label, and (for depth only) derive relation triples by comparing
//! per-primitive statistics.

mod grid;
mod jigsaw;
mod sparse;

pub use grid::{compile_depth, compile_flow, DepthField, FlowAxis, FlowField, IN_FRONT_OF};
pub use jigsaw::{compile_jigsaw, default_strip_width, JigsawInstance, StripAnchor, JIGSAW_IDS};
pub use sparse::{
    compile_detections, compile_points, compile_semantic_correspondence,
    compile_visual_correspondence, Candidate, CandidateScoreSet, Detection, DetectionSet,
    LabeledPoint, LabeledPoints, Match, MatchSet,
};

use thiserror::Error;

use crate::metrics::MetricError;
use crate::model::GeometryError;

/// Default grid order for grid-based modalities.
pub const DEFAULT_GRID: u32 = 8;
/// Default depth margin on the normalized `[0, 1]` scale.
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("field has {got} values, expected {expected}")]
    FieldSize { expected: usize, got: usize },
    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },
    #[error("depth value {value} at index {index} is outside [0, 1]")]
    OutOfRangeDepth { index: usize, value: f64 },
    #[error("depth margin must be finite and non-negative, got {0}")]
    InvalidMargin(f64),
    #[error("input is empty")]
    EmptyInput,
    #[error("duplicate label {0}")]
    DuplicateLabel(String),
    #[error("score {score} for {id} is outside [0, 1]")]
    ScoreRange { id: String, score: f64 },
    #[error("non-finite score for {0}")]
    NonFiniteScore(String),
    #[error("candidate is {got:?} but the missing region is {expected:?}")]
    DimsMismatch {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("strip width {width} does not fit (limit {limit})")]
    StripTooWide { width: u32, limit: u32 },
    #[error("missing region {0:?} does not fit inside the source image")]
    RegionOutOfBounds((u32, u32, u32, u32)),
}
