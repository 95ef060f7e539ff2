//! Grid modalities: depth and optical flow.

use super::CompileError;
use crate::model::{
    cell_center, make_grid, Direction, GridSpec, ImageDims, ImageRef, Item, Location, Modality,
    PerceptionProgram, ReadOut, Relation,
};

pub const IN_FRONT_OF: &str = "in-front-of";

/// Per-pixel depth in `[0, 1]`, larger is nearer. Row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    dims: ImageDims,
    values: Vec<f64>,
}

impl DepthField {
    pub fn new(dims: ImageDims, values: Vec<f64>) -> Result<Self, CompileError> {
        if values.len() != dims.pixel_count() {
            return Err(CompileError::FieldSize {
                expected: dims.pixel_count(),
                got: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(CompileError::NonFiniteValue { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(CompileError::OutOfRangeDepth { index, value });
            }
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.dims.width() as usize + x as usize]
    }
}

/// Per-pixel motion `(u, v)` in pixels per frame. Row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    dims: ImageDims,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(dims: ImageDims, u: Vec<f64>, v: Vec<f64>) -> Result<Self, CompileError> {
        for comp in [&u, &v] {
            if comp.len() != dims.pixel_count() {
                return Err(CompileError::FieldSize {
                    expected: dims.pixel_count(),
                    got: comp.len(),
                });
            }
        }
        let n = u.len();
        if let Some(index) = u.iter().chain(&v).position(|x| !x.is_finite()) {
            return Err(CompileError::NonFiniteValue { index: index % n });
        }
        Ok(Self { dims, u, v })
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowAxis {
    #[default]
    Horizontal,
    Vertical,
}

struct CellStats {
    min: f64,
    max: f64,
    mean: f64,
}

fn cell_stats(values: &[f64], width: u32, grid: &GridSpec) -> Vec<CellStats> {
    grid.cells()
        .iter()
        .map(|cell| {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            let mut sum = 0.0;
            for y in cell.y0..cell.y1 {
                let row = y as usize * width as usize;
                for &v in &values[row + cell.x0 as usize..row + cell.x1 as usize] {
                    min = min.min(v);
                    max = max.max(v);
                    sum += v;
                }
            }
            CellStats {
                min,
                max,
                mean: sum / cell.area() as f64,
            }
        })
        .collect()
}

fn grid_program(modality: Modality, grid: &GridSpec) -> PerceptionProgram {
    let mut pp = PerceptionProgram::new(modality, vec![ImageRef::new("img0", grid.dims())]);
    pp.grid = Some(grid.shape());
    pp
}

fn cell_id(k: usize) -> String {
    format!("cell_{k}")
}

/// Depth program: one `[min, max]` interval per grid cell plus an
/// `in-front-of` triple for every 4-neighbour pair whose cell means differ by
/// more than `tau`.
pub fn compile_depth(
    field: &DepthField,
    order: u32,
    tau: f64,
) -> Result<PerceptionProgram, CompileError> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(CompileError::InvalidMargin(tau));
    }
    let grid = make_grid(field.dims, order)?;
    let stats = cell_stats(&field.values, field.dims.width(), &grid);

    let mut pp = grid_program(Modality::Depth, &grid);
    for (k, s) in stats.iter().enumerate() {
        pp.items.push(Item::new(
            cell_id(k),
            Location::Point(cell_center(&grid, k)?),
            Some(ReadOut::Interval {
                lo: s.min,
                hi: s.max,
            }),
        ));
    }
    for (a, b) in grid.neighbor_pairs() {
        let (ma, mb) = (stats[a].mean, stats[b].mean);
        if ma > mb + tau {
            pp.relations
                .push(Relation::new(cell_id(a), IN_FRONT_OF, cell_id(b)));
        } else if mb > ma + tau {
            pp.relations
                .push(Relation::new(cell_id(b), IN_FRONT_OF, cell_id(a)));
        }
    }
    Ok(pp)
}

/// Flow program: the sign of the cell-mean component along `axis` as a
/// direction word per grid cell. Zero mean reads as "right" (or "down").
pub fn compile_flow(
    field: &FlowField,
    order: u32,
    axis: FlowAxis,
) -> Result<PerceptionProgram, CompileError> {
    let grid = make_grid(field.dims, order)?;
    let (component, negative, positive) = match axis {
        FlowAxis::Horizontal => (&field.u, Direction::Left, Direction::Right),
        FlowAxis::Vertical => (&field.v, Direction::Up, Direction::Down),
    };
    let stats = cell_stats(component, field.dims.width(), &grid);

    let mut pp = grid_program(Modality::Flow, &grid);
    for (k, s) in stats.iter().enumerate() {
        let dir = if s.mean < 0.0 { negative } else { positive };
        pp.items.push(Item::new(
            cell_id(k),
            Location::Point(cell_center(&grid, k)?),
            Some(ReadOut::Direction(dir)),
        ));
    }
    Ok(pp)
}
