//! Perception programs: compact, model-readable summaries of what vision
//! tools see in an image.
//!
//! A [`PerceptionProgram`] is built by one of the compilers in [`compile`],
//! written to text by [`text::serialize`] and read back by [`text::parse`].
//! [`solve`] answers benchmark questions straight from a program and
//! [`analysis`] holds the evaluation metrics.

pub mod analysis;
pub mod compile;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod solve;
pub mod text;

pub use model::{
    Direction, GeometryError, GridShape, ImageDims, ImageRef, Item, Location, Modality, NormBox,
    NormCoord, PerceptionProgram, ReadOut, Relation, Violation,
};
