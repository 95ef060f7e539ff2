//! Python bindings: parse, compile, validate and solve perception programs
//! from Python. Errors surface as `ValueError` (bad data) or `OSError`
//! (unreadable files).

use std::path::PathBuf;

use perception_program::analysis::{self, Ranking};
use perception_program::compile::{
    self, DepthField, FlowAxis, FlowField, DEFAULT_GRID, DEFAULT_TAU,
};
use perception_program::ingest::{DepthConvention, IngestError, Reader};
use perception_program::model::{self, ImageDims, Modality, PerceptionProgram};
use perception_program::solve::{self, CameraConvention};
use perception_program::text;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ingest_err(e: IngestError) -> PyErr {
    match e {
        IngestError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// A parsed or compiled perception program.
#[pyclass(name = "Program", module = "p2py", frozen, skip_from_py_object)]
struct PyProgram {
    inner: PerceptionProgram,
}

#[pymethods]
impl PyProgram {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        text::parse(text)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    fn serialize(&self) -> PyResult<String> {
        text::serialize(&self.inner).map_err(value_err)
    }

    #[getter]
    fn modality(&self) -> &'static str {
        self.inner.modality.as_str()
    }

    #[getter]
    fn item_ids(&self) -> Vec<String> {
        self.inner.items.iter().map(|i| i.id.clone()).collect()
    }

    /// Relations as `(subject, predicate, object)` triples.
    #[getter]
    fn relations(&self) -> Vec<(String, String, String)> {
        self.inner
            .relations
            .iter()
            .map(|r| (r.subject.clone(), r.predicate.clone(), r.object.clone()))
            .collect()
    }

    /// Violation messages; empty when the program is well formed.
    fn validate(&self) -> Vec<String> {
        model::validate_program(&self.inner)
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    fn redacted(&self) -> Self {
        Self {
            inner: model::redact_readouts(&self.inner),
        }
    }

    fn quantized(&self) -> Self {
        Self {
            inner: self.inner.quantized(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.items.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __str__(&self) -> PyResult<String> {
        self.serialize()
    }

    fn __repr__(&self) -> String {
        format!(
            "<Program {} with {} items>",
            self.inner.modality,
            self.inner.items.len()
        )
    }
}

fn wrap(pp: Result<PerceptionProgram, compile::CompileError>) -> PyResult<PyProgram> {
    pp.map(|inner| PyProgram { inner }).map_err(value_err)
}

fn dims(width: u32, height: u32) -> PyResult<ImageDims> {
    ImageDims::new(width, height).map_err(value_err)
}

fn parse_axis(axis: &str) -> PyResult<FlowAxis> {
    match axis {
        "horizontal" => Ok(FlowAxis::Horizontal),
        "vertical" => Ok(FlowAxis::Vertical),
        other => Err(value_err(format!("unknown axis `{other}`"))),
    }
}

/// Compile a row-major depth map with values in [0, 1], larger = nearer.
#[pyfunction]
#[pyo3(signature = (values, width, height, grid=DEFAULT_GRID, tau=DEFAULT_TAU))]
fn compile_depth(
    values: Vec<f64>,
    width: u32,
    height: u32,
    grid: u32,
    tau: f64,
) -> PyResult<PyProgram> {
    let field = DepthField::new(dims(width, height)?, values).map_err(value_err)?;
    wrap(compile::compile_depth(&field, grid, tau))
}

/// Compile a row-major flow field given as separate u and v components.
#[pyfunction]
#[pyo3(signature = (u, v, width, height, grid=DEFAULT_GRID, axis="horizontal"))]
fn compile_flow(
    u: Vec<f64>,
    v: Vec<f64>,
    width: u32,
    height: u32,
    grid: u32,
    axis: &str,
) -> PyResult<PyProgram> {
    let field = FlowField::new(dims(width, height)?, u, v).map_err(value_err)?;
    wrap(compile::compile_flow(&field, grid, parse_axis(axis)?))
}

/// Read a tool output file and compile it. Jigsaw needs images and is not
/// available here.
#[pyfunction]
#[pyo3(signature = (modality, path, grid=DEFAULT_GRID, tau=DEFAULT_TAU, axis="horizontal", convention="nearer_is_larger"))]
fn compile_file(
    modality: &str,
    path: PathBuf,
    grid: u32,
    tau: f64,
    axis: &str,
    convention: &str,
) -> PyResult<PyProgram> {
    let reader = Reader::default();
    let m = Modality::parse(modality)
        .ok_or_else(|| value_err(format!("unknown modality `{modality}`")))?;
    let pp = match m {
        Modality::Depth => {
            let c = DepthConvention::parse(convention)
                .ok_or_else(|| value_err(format!("unknown convention `{convention}`")))?;
            compile::compile_depth(&reader.read_depth(&path, c).map_err(ingest_err)?, grid, tau)
        }
        Modality::Flow => compile::compile_flow(
            &reader.read_flow(&path).map_err(ingest_err)?,
            grid,
            parse_axis(axis)?,
        ),
        Modality::VisualCorrespondence => {
            compile::compile_visual_correspondence(&reader.read_matches(&path).map_err(ingest_err)?)
        }
        Modality::Detection => {
            compile::compile_detections(&reader.read_detections(&path).map_err(ingest_err)?)
        }
        Modality::SemanticCorrespondence => compile::compile_semantic_correspondence(
            &reader.read_candidates(&path).map_err(ingest_err)?,
        ),
        Modality::Points => {
            compile::compile_points(&reader.read_points(&path).map_err(ingest_err)?)
        }
        Modality::Jigsaw => {
            return Err(value_err("jigsaw compiles from images; use the p2 command"))
        }
    };
    wrap(pp)
}

/// `(floor(1000 x / W), floor(1000 y / H))`.
#[pyfunction]
fn normalize_coord(x: i64, y: i64, width: u32, height: u32) -> PyResult<(u16, u16)> {
    let c = model::normalize_coord(x, y, dims(width, height)?).map_err(value_err)?;
    Ok((c.x(), c.y()))
}

fn tiers(r: &Ranking) -> Vec<Vec<String>> {
    r.tiers().to_vec()
}

/// Cells of a depth program, nearest first; tied cells share a tier.
#[pyfunction]
fn ranking_from_depth(program: &PyProgram) -> PyResult<Vec<Vec<String>>> {
    analysis::ranking_from_depth(&program.inner)
        .map(|r| tiers(&r))
        .map_err(value_err)
}

/// Kendall tau-b between two rankings given as lists of tiers.
#[pyfunction]
fn kendall_tau(a: Vec<Vec<String>>, b: Vec<Vec<String>>) -> PyResult<f64> {
    let a = Ranking::with_ties(a).map_err(value_err)?;
    let b = Ranking::with_ties(b).map_err(value_err)?;
    analysis::kendall_tau(&a, &b).map_err(value_err)
}

#[pyfunction]
fn solve_jigsaw(program: &PyProgram) -> PyResult<&'static str> {
    solve::solve_jigsaw(&program.inner).map_err(value_err)
}

#[pyfunction]
fn solve_semantic(program: &PyProgram) -> PyResult<String> {
    solve::solve_semantic(&program.inner).map_err(value_err)
}

#[pyfunction]
fn naive_correspondence(points: &PyProgram) -> PyResult<String> {
    solve::naive_correspondence(&points.inner).map_err(value_err)
}

#[pyfunction]
fn solve_relative_depth(points: &PyProgram, depth: &PyProgram) -> PyResult<String> {
    solve::solve_relative_depth(&points.inner, &depth.inner).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (flow, convention="camera_opposes_flow"))]
fn solve_multiview(flow: &PyProgram, convention: &str) -> PyResult<&'static str> {
    let c = CameraConvention::parse(convention)
        .ok_or_else(|| value_err(format!("unknown convention `{convention}`")))?;
    solve::solve_multiview(&flow.inner, c)
        .map(|d| d.as_str())
        .map_err(value_err)
}

/// The option label a model reply commits to, or `None`.
#[pyfunction]
fn extract_answer(text: &str, options: Vec<String>) -> Option<String> {
    let options: Vec<&str> = options.iter().map(String::as_str).collect();
    p2_harness::extract_answer(text, &options)
}

/// Pull the program text out of a model reply (fenced block or bare).
#[pyfunction]
fn extract_block(text: &str) -> String {
    text::extract_block(text).to_string()
}

#[pymodule]
fn p2py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProgram>()?;
    m.add_function(wrap_pyfunction!(compile_depth, m)?)?;
    m.add_function(wrap_pyfunction!(compile_flow, m)?)?;
    m.add_function(wrap_pyfunction!(compile_file, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_coord, m)?)?;
    m.add_function(wrap_pyfunction!(ranking_from_depth, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(solve_jigsaw, m)?)?;
    m.add_function(wrap_pyfunction!(solve_semantic, m)?)?;
    m.add_function(wrap_pyfunction!(naive_correspondence, m)?)?;
    m.add_function(wrap_pyfunction!(solve_relative_depth, m)?)?;
    m.add_function(wrap_pyfunction!(solve_multiview, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer, m)?)?;
    m.add_function(wrap_pyfunction!(extract_block, m)?)?;
    m.add("DEFAULT_GRID", DEFAULT_GRID)?;
    m.add("DEFAULT_TAU", DEFAULT_TAU)?;
    Ok(())
}
