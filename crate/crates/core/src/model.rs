//! The perception-program data model.
//!
//! A [`PerceptionProgram`] is a modality tag, the images it talks about, an
//! optional grid shape, an ordered list of [`Item`]s and an optional set of
//! [`Relation`] triples. Everything is expressed in a normalized
//! `[0, 1000]` coordinate space so that programs from images of different
//! sizes read the same way.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

/// Upper bound of the normalized coordinate range (inclusive).
pub const NORM_MAX: u16 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: u32, height: u32 },
    #[error("pixel ({x}, {y}) is outside a {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("normalized coordinate ({x}, {y}) exceeds {NORM_MAX}")]
    CoordRange { x: u32, y: u32 },
    #[error("box corners are inverted: ({x0}, {y0}) .. ({x1}, {y1})")]
    InvertedBox { x0: u32, y0: u32, x1: u32, y1: u32 },
    #[error("grid order must be at least 1")]
    InvalidGrid,
    #[error("grid order {order} is finer than the {width}x{height} image allows")]
    GridTooFine { order: u32, width: u32, height: u32 },
    #[error("cell index {index} out of range for {count} cells")]
    IndexOutOfRange { index: usize, count: usize },
}

/// Size of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageDims {
    width: u32,
    height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < f64::from(self.width) && y < f64::from(self.height)
    }
}

/// A point in the normalized `[0, 1000]²` space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NormCoord {
    x: u16,
    y: u16,
}

impl NormCoord {
    pub fn new(x: u32, y: u32) -> Result<Self, GeometryError> {
        if x > u32::from(NORM_MAX) || y > u32::from(NORM_MAX) {
            return Err(GeometryError::CoordRange { x, y });
        }
        Ok(Self {
            x: x as u16,
            y: y as u16,
        })
    }

    pub fn x(&self) -> u16 {
        self.x
    }

    pub fn y(&self) -> u16 {
        self.y
    }

    /// Squared Euclidean distance; exact in integer arithmetic.
    pub fn dist2(&self, other: &NormCoord) -> i64 {
        let dx = i64::from(self.x) - i64::from(other.x);
        let dy = i64::from(self.y) - i64::from(other.y);
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &NormCoord) -> f64 {
        (self.dist2(other) as f64).sqrt()
    }
}

/// An axis-aligned box in normalized space with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NormBox {
    x0: u16,
    y0: u16,
    x1: u16,
    y1: u16,
}

impl NormBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, GeometryError> {
        NormCoord::new(x0, y0)?;
        NormCoord::new(x1, y1)?;
        if x0 > x1 || y0 > y1 {
            return Err(GeometryError::InvertedBox { x0, y0, x1, y1 });
        }
        Ok(Self {
            x0: x0 as u16,
            y0: y0 as u16,
            x1: x1 as u16,
            y1: y1 as u16,
        })
    }

    pub fn corners(&self) -> [u16; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    /// Area counting both corners as covered cells.
    pub fn area(&self) -> u64 {
        (u64::from(self.x1 - self.x0) + 1) * (u64::from(self.y1 - self.y0) + 1)
    }

    pub fn intersection_area(&self, other: &NormBox) -> u64 {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        if x0 > x1 || y0 > y1 {
            return 0;
        }
        (u64::from(x1 - x0) + 1) * (u64::from(y1 - y0) + 1)
    }

    pub fn iou(&self, other: &NormBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

/// Where a primitive sits: a point or a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Point(NormCoord),
    Box(NormBox),
}

impl Location {
    pub fn as_point(&self) -> Option<NormCoord> {
        match self {
            Location::Point(p) => Some(*p),
            Location::Box(_) => None,
        }
    }

    pub fn as_box(&self) -> Option<NormBox> {
        match self {
            Location::Box(b) => Some(*b),
            Location::Point(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(Direction::Left),
            "right" => Some(Direction::Right),
            "up" => Some(Direction::Up),
            "down" => Some(Direction::Down),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The measurement attached to a primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReadOut {
    Interval { lo: f64, hi: f64 },
    Direction(Direction),
    Point(NormCoord),
    Score(f64),
    Confidence(f64),
}

impl ReadOut {
    pub fn kind(&self) -> &'static str {
        match self {
            ReadOut::Interval { .. } => "interval",
            ReadOut::Direction(_) => "direction",
            ReadOut::Point(_) => "point",
            ReadOut::Score(_) => "score",
            ReadOut::Confidence(_) => "confidence",
        }
    }

    /// Round every scalar to three decimals (ties to even), as the text
    /// format does.
    pub fn quantized(&self) -> ReadOut {
        match *self {
            ReadOut::Interval { lo, hi } => ReadOut::Interval {
                lo: quantize(lo),
                hi: quantize(hi),
            },
            ReadOut::Score(v) => ReadOut::Score(quantize(v)),
            ReadOut::Confidence(v) => ReadOut::Confidence(quantize(v)),
            other => other,
        }
    }
}

/// Fixed-point rounding to three decimals with ties to even.
pub fn quantize(v: f64) -> f64 {
    (v * 1000.0).round_ties_even() / 1000.0 + 0.0
}

/// One primitive record: identifier, location, optional readout and label.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: String,
    pub loc: Location,
    pub readout: Option<ReadOut>,
    pub label: Option<String>,
}

impl Item {
    pub fn new(id: impl Into<String>, loc: Location, readout: Option<ReadOut>) -> Self {
        Self {
            id: id.into(),
            loc,
            readout,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Relation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Relation {
    /// Order by subject, then object, then predicate.
    pub fn canonical_cmp(&self, other: &Relation) -> std::cmp::Ordering {
        (&self.subject, &self.object, &self.predicate).cmp(&(
            &other.subject,
            &other.object,
            &other.predicate,
        ))
    }

    pub fn new(
        subject: impl Into<String>,
        predicate: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Depth,
    Flow,
    VisualCorrespondence,
    Jigsaw,
    Detection,
    SemanticCorrespondence,
    Points,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::Depth,
        Modality::Flow,
        Modality::VisualCorrespondence,
        Modality::Jigsaw,
        Modality::Detection,
        Modality::SemanticCorrespondence,
        Modality::Points,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Flow => "flow",
            Modality::VisualCorrespondence => "visual_correspondence",
            Modality::Jigsaw => "jigsaw",
            Modality::Detection => "detection",
            Modality::SemanticCorrespondence => "semantic_correspondence",
            Modality::Points => "points",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn accepts(&self, r: &ReadOut) -> bool {
        matches!(
            (self, r),
            (Modality::Depth, ReadOut::Interval { .. })
                | (Modality::Flow, ReadOut::Direction(_))
                | (Modality::VisualCorrespondence, ReadOut::Point(_))
                | (Modality::Jigsaw, ReadOut::Score(_))
                | (Modality::SemanticCorrespondence, ReadOut::Score(_))
                | (Modality::Detection, ReadOut::Confidence(_))
        )
    }

    pub fn uses_boxes(&self) -> bool {
        matches!(self, Modality::Detection | Modality::Jigsaw)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub id: String,
    pub dims: ImageDims,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, dims: ImageDims) -> Self {
        Self {
            id: id.into(),
            dims,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: u32,
    pub cols: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionProgram {
    pub modality: Modality,
    pub images: Vec<ImageRef>,
    pub grid: Option<GridShape>,
    pub items: Vec<Item>,
    pub relations: Vec<Relation>,
}

impl PerceptionProgram {
    pub fn new(modality: Modality, images: Vec<ImageRef>) -> Self {
        Self {
            modality,
            images,
            grid: None,
            items: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|it| it.id == id)
    }

    pub fn is_redacted(&self) -> bool {
        self.items.iter().all(|it| it.readout.is_none())
    }

    /// The canonical form the text format writes: readouts rounded to three
    /// decimals and relations sorted by (subject, object, predicate).
    pub fn quantized(&self) -> PerceptionProgram {
        let mut out = self.clone();
        for it in &mut out.items {
            it.readout = it.readout.map(|r| r.quantized());
        }
        out.relations.sort_by(Relation::canonical_cmp);
        out
    }
}

/// Map a pixel to normalized space: `(⌊1000x/W⌋, ⌊1000y/H⌋)`.
pub fn normalize_coord(x: i64, y: i64, dims: ImageDims) -> Result<NormCoord, GeometryError> {
    let (w, h) = (i64::from(dims.width), i64::from(dims.height));
    if x < 0 || y < 0 || x >= w || y >= h {
        return Err(GeometryError::OutOfBounds {
            x: x as f64,
            y: y as f64,
            width: dims.width,
            height: dims.height,
        });
    }
    NormCoord::new((1000 * x / w) as u32, (1000 * y / h) as u32)
}

/// Normalize a sub-pixel location by first snapping to the pixel containing it.
pub fn normalize_point(x: f64, y: f64, dims: ImageDims) -> Result<NormCoord, GeometryError> {
    if !dims.contains(x, y) {
        return Err(GeometryError::OutOfBounds {
            x,
            y,
            width: dims.width,
            height: dims.height,
        });
    }
    normalize_coord(x.floor() as i64, y.floor() as i64, dims)
}

/// Normalize a detector box. Corners are snapped to pixels and clamped into
/// the image first, so boxes using an exclusive `x1 = W` convention are
/// accepted.
pub fn normalize_box(
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    dims: ImageDims,
) -> Result<NormBox, GeometryError> {
    if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
        return Err(GeometryError::OutOfBounds {
            x: x0,
            y: y0,
            width: dims.width,
            height: dims.height,
        });
    }
    let clamp = |v: f64, n: u32| -> i64 { (v.floor() as i64).clamp(0, i64::from(n) - 1) };
    let (cx0, cy0) = (clamp(x0, dims.width), clamp(y0, dims.height));
    let (cx1, cy1) = (clamp(x1, dims.width), clamp(y1, dims.height));
    if cx0 > cx1 || cy0 > cy1 {
        return Err(GeometryError::OutOfBounds {
            x: x0,
            y: y0,
            width: dims.width,
            height: dims.height,
        });
    }
    let a = normalize_coord(cx0, cy0, dims)?;
    let b = normalize_coord(cx1, cy1, dims)?;
    NormBox::new(a.x.into(), a.y.into(), b.x.into(), b.y.into())
}

/// A half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CellRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() as usize * self.height() as usize
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Integer center pixel, rounded down.
    pub fn center(&self) -> (u32, u32) {
        ((self.x0 + self.x1 - 1) / 2, (self.y0 + self.y1 - 1) / 2)
    }
}

/// A `P × P` row-major partition of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    order: u32,
    dims: ImageDims,
    cells: Vec<CellRect>,
}

impl GridSpec {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn cells(&self) -> &[CellRect] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            rows: self.order,
            cols: self.order,
        }
    }

    /// Cell index from (row, column).
    pub fn index(&self, row: u32, col: u32) -> usize {
        (row * self.order + col) as usize
    }

    /// Unordered 4-neighbour pairs `(a, b)` with `a < b`, in row-major order
    /// of `a`; each cell lists its right neighbour before its lower one.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let p = self.order;
        let mut out = Vec::with_capacity(2 * (p * p.saturating_sub(1)) as usize);
        for row in 0..p {
            for col in 0..p {
                let k = self.index(row, col);
                if col + 1 < p {
                    out.push((k, self.index(row, col + 1)));
                }
                if row + 1 < p {
                    out.push((k, self.index(row + 1, col)));
                }
            }
        }
        out
    }
}

/// Split `dims` into a `P × P` grid. Cell `(i, j)` spans rows
/// `[⌊iH/P⌋, ⌊(i+1)H/P⌋)` and columns `[⌊jW/P⌋, ⌊(j+1)W/P⌋)`.
pub fn make_grid(dims: ImageDims, order: u32) -> Result<GridSpec, GeometryError> {
    if order == 0 {
        return Err(GeometryError::InvalidGrid);
    }
    if order > dims.width.min(dims.height) {
        return Err(GeometryError::GridTooFine {
            order,
            width: dims.width,
            height: dims.height,
        });
    }
    let bound = |i: u32, n: u32| ((u64::from(i) * u64::from(n)) / u64::from(order)) as u32;
    let mut cells = Vec::with_capacity((order * order) as usize);
    for i in 0..order {
        for j in 0..order {
            cells.push(CellRect {
                x0: bound(j, dims.width),
                x1: bound(j + 1, dims.width),
                y0: bound(i, dims.height),
                y1: bound(i + 1, dims.height),
            });
        }
    }
    Ok(GridSpec { order, dims, cells })
}

pub fn cell_center(grid: &GridSpec, k: usize) -> Result<NormCoord, GeometryError> {
    let cell = grid.cells.get(k).ok_or(GeometryError::IndexOutOfRange {
        index: k,
        count: grid.cells.len(),
    })?;
    let (cx, cy) = cell.center();
    normalize_coord(i64::from(cx), i64::from(cy), grid.dims)
}

pub fn cell_of_point(grid: &GridSpec, x: i64, y: i64) -> Result<usize, GeometryError> {
    let dims = grid.dims;
    if x < 0 || y < 0 || x >= i64::from(dims.width) || y >= i64::from(dims.height) {
        return Err(GeometryError::OutOfBounds {
            x: x as f64,
            y: y as f64,
            width: dims.width,
            height: dims.height,
        });
    }
    // Band i holds v iff ⌊iN/P⌋ ≤ v, i.e. i ≤ ⌈(v+1)P/N⌉ - 1.
    let p = i64::from(grid.order);
    let row = ((y + 1) * p - 1) / i64::from(dims.height);
    let col = ((x + 1) * p - 1) / i64::from(dims.width);
    Ok(grid.index(row as u32, col as u32))
}

/// One broken invariant found by [`validate_program`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyProgram,
    DuplicateId(String),
    DanglingRelation { subject: String, object: String },
    SelfRelation(String),
    ReadoutModalityMismatch { id: String, readout: &'static str },
    LocationModalityMismatch { id: String },
    ReadoutOutOfRange { id: String },
    GridItemCount { expected: usize, found: usize },
    DuplicateImageId(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyProgram => write!(f, "empty program: no items"),
            Violation::DuplicateId(id) => write!(f, "duplicate item id {id}"),
            Violation::DanglingRelation { subject, object } => {
                write!(f, "dangling relation ({subject}, {object})")
            }
            Violation::SelfRelation(id) => write!(f, "self relation on {id}"),
            Violation::ReadoutModalityMismatch { id, readout } => {
                write!(f, "readout/modality mismatch on {id}: {readout}")
            }
            Violation::LocationModalityMismatch { id } => {
                write!(f, "location/modality mismatch on {id}")
            }
            Violation::ReadoutOutOfRange { id } => write!(f, "readout out of range on {id}"),
            Violation::GridItemCount { expected, found } => {
                write!(f, "grid expects {expected} items, found {found}")
            }
            Violation::DuplicateImageId(id) => write!(f, "duplicate image id {id}"),
        }
    }
}

fn unit(v: f64) -> bool {
    v.is_finite() && (0.0..=1.0).contains(&v)
}

/// Check every structural invariant. An empty vector means the program is
/// well formed.
pub fn validate_program(pp: &PerceptionProgram) -> Vec<Violation> {
    let mut out = Vec::new();
    if pp.items.is_empty() && pp.modality != Modality::Detection {
        out.push(Violation::EmptyProgram);
    }

    let mut seen_images = HashSet::new();
    for img in &pp.images {
        if !seen_images.insert(img.id.as_str()) {
            out.push(Violation::DuplicateImageId(img.id.clone()));
        }
    }

    let mut ids = HashSet::new();
    for it in &pp.items {
        if !ids.insert(it.id.as_str()) {
            out.push(Violation::DuplicateId(it.id.clone()));
        }
        let boxed = matches!(it.loc, Location::Box(_));
        if boxed != pp.modality.uses_boxes() {
            out.push(Violation::LocationModalityMismatch { id: it.id.clone() });
        }
        if let Some(r) = &it.readout {
            if !pp.modality.accepts(r) {
                out.push(Violation::ReadoutModalityMismatch {
                    id: it.id.clone(),
                    readout: r.kind(),
                });
            }
            let in_range = match *r {
                ReadOut::Interval { lo, hi } => unit(lo) && unit(hi) && lo <= hi,
                ReadOut::Score(v) | ReadOut::Confidence(v) => unit(v),
                ReadOut::Direction(_) | ReadOut::Point(_) => true,
            };
            if !in_range {
                out.push(Violation::ReadoutOutOfRange { id: it.id.clone() });
            }
        }
    }

    if let Some(g) = pp.grid {
        let expected = g.rows as usize * g.cols as usize;
        if expected != pp.items.len() {
            out.push(Violation::GridItemCount {
                expected,
                found: pp.items.len(),
            });
        }
    }

    for rel in &pp.relations {
        if !ids.contains(rel.subject.as_str()) || !ids.contains(rel.object.as_str()) {
            out.push(Violation::DanglingRelation {
                subject: rel.subject.clone(),
                object: rel.object.clone(),
            });
        } else if rel.subject == rel.object {
            out.push(Violation::SelfRelation(rel.subject.clone()));
        }
    }
    out
}

/// Strip all readouts and relations, keeping primitives and locations.
pub fn redact_readouts(pp: &PerceptionProgram) -> PerceptionProgram {
    let mut out = pp.clone();
    for it in &mut out.items {
        it.readout = None;
    }
    out.relations.clear();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn pt(x: u32, y: u32) -> NormCoord {
        NormCoord::new(x, y).unwrap()
    }

    #[test]
    fn normalize_coord_examples() {
        assert_eq!(normalize_coord(0, 0, dims(640, 480)).unwrap(), pt(0, 0));
        assert_eq!(
            normalize_coord(400, 240, dims(800, 480)).unwrap(),
            pt(500, 500)
        );
        // 1000*799/800 = 998.75, 1000*479/480 = 997.9
        assert_eq!(
            normalize_coord(799, 479, dims(800, 480)).unwrap(),
            pt(998, 997)
        );
        assert!(matches!(
            normalize_coord(800, 0, dims(800, 480)),
            Err(GeometryError::OutOfBounds { .. })
        ));
        assert!(normalize_coord(-1, 0, dims(800, 480)).is_err());
    }

    #[test]
    fn normalize_box_examples() {
        let b = normalize_box(32.0, 48.0, 128.0, 256.0, dims(640, 480)).unwrap();
        assert_eq!(b.corners(), [50, 100, 200, 533]);
        let b = normalize_box(0.0, 0.0, 999.0, 999.0, dims(1000, 1000)).unwrap();
        assert_eq!(b.corners(), [0, 0, 999, 999]);
        let b = normalize_box(10.0, 10.0, 10.0, 10.0, dims(100, 100)).unwrap();
        assert_eq!(b.corners(), [100, 100, 100, 100]);
        // exclusive right/bottom edge is clamped
        let b = normalize_box(0.0, 0.0, 640.0, 480.0, dims(640, 480)).unwrap();
        assert_eq!(b.corners(), [0, 0, 998, 997]);
        assert!(normalize_box(20.0, 0.0, 10.0, 5.0, dims(640, 480)).is_err());
    }

    #[test]
    fn grid_even_and_uneven() {
        let g = make_grid(dims(4, 4), 2).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.cells().iter().all(|c| c.width() == 2 && c.height() == 2));
        assert_eq!(
            g.cells()[1],
            CellRect {
                x0: 2,
                y0: 0,
                x1: 4,
                y1: 2
            }
        );

        let g = make_grid(dims(5, 5), 2).unwrap();
        let widths: Vec<u32> = g.cells().iter().map(|c| c.width()).collect();
        assert_eq!(widths, vec![2, 3, 2, 3]);

        assert!(matches!(
            make_grid(dims(3, 3), 4),
            Err(GeometryError::GridTooFine { .. })
        ));
        assert_eq!(make_grid(dims(3, 3), 0), Err(GeometryError::InvalidGrid));
    }

    #[test]
    fn cell_centers() {
        let g = make_grid(dims(4, 4), 2).unwrap();
        assert_eq!(cell_center(&g, 0).unwrap(), pt(0, 0));
        assert_eq!(cell_center(&g, 3).unwrap(), pt(500, 500));
        let g = make_grid(dims(1000, 1000), 1).unwrap();
        assert_eq!(cell_center(&g, 0).unwrap(), pt(499, 499));
        assert!(matches!(
            cell_center(&g, 1),
            Err(GeometryError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn point_lookup() {
        let g = make_grid(dims(4, 4), 2).unwrap();
        assert_eq!(cell_of_point(&g, 3, 0).unwrap(), 1);
        assert_eq!(cell_of_point(&g, 0, 0).unwrap(), 0);
        assert!(cell_of_point(&g, 4, 0).is_err());
    }

    #[test]
    fn neighbor_pairs_count() {
        let g = make_grid(dims(8, 8), 4).unwrap();
        assert_eq!(g.neighbor_pairs().len(), 2 * 4 * 3);
    }

    fn depth_program() -> PerceptionProgram {
        let g = make_grid(dims(4, 4), 2).unwrap();
        let mut pp =
            PerceptionProgram::new(Modality::Depth, vec![ImageRef::new("img0", dims(4, 4))]);
        pp.grid = Some(g.shape());
        for k in 0..4 {
            pp.items.push(Item::new(
                format!("cell_{k}"),
                Location::Point(cell_center(&g, k).unwrap()),
                Some(ReadOut::Interval { lo: 0.1, hi: 0.2 }),
            ));
        }
        pp.relations
            .push(Relation::new("cell_1", "in-front-of", "cell_0"));
        pp
    }

    #[test]
    fn validation() {
        let pp = depth_program();
        assert!(validate_program(&pp).is_empty());

        let mut bad = pp.clone();
        bad.relations
            .push(Relation::new("cell_1", "in-front-of", "cell_9"));
        let v = validate_program(&bad);
        assert!(v
            .iter()
            .any(|v| v.to_string().contains("dangling relation")));

        let mut bad = pp.clone();
        bad.modality = Modality::Flow;
        let v = validate_program(&bad);
        assert!(v
            .iter()
            .any(|v| v.to_string().contains("readout/modality mismatch")));

        let mut bad = pp.clone();
        bad.items[0].readout = Some(ReadOut::Interval { lo: 0.5, hi: 0.2 });
        assert_eq!(
            validate_program(&bad),
            vec![Violation::ReadoutOutOfRange {
                id: "cell_0".into()
            }]
        );

        let empty_det = PerceptionProgram::new(Modality::Detection, vec![]);
        assert!(validate_program(&empty_det).is_empty());
        let empty_depth = PerceptionProgram::new(Modality::Depth, vec![]);
        assert_eq!(
            validate_program(&empty_depth),
            vec![Violation::EmptyProgram]
        );
    }

    #[test]
    fn redaction_is_idempotent() {
        let pp = depth_program();
        let once = redact_readouts(&pp);
        assert!(once.is_redacted());
        assert!(once.relations.is_empty());
        assert_eq!(once.items.len(), 4);
        assert_eq!(redact_readouts(&once), once);
        assert!(validate_program(&once).is_empty());
    }

    #[test]
    fn quantize_ties_to_even() {
        assert_eq!(quantize(0.1234), 0.123);
        assert_eq!(quantize(0.5), 0.5);
        // exactly representable ties: 62.5 and 187.5
        assert_eq!(quantize(0.0625), 0.062);
        assert_eq!(quantize(0.1875), 0.188);
        assert!(quantize(-0.0001).is_sign_positive());
    }

    #[test]
    fn iou() {
        let a = NormBox::new(0, 0, 9, 9).unwrap();
        let b = NormBox::new(5, 0, 14, 9).unwrap();
        assert_eq!(a.iou(&a), 1.0);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        let c = NormBox::new(20, 20, 30, 30).unwrap();
        assert_eq!(a.iou(&c), 0.0);
    }
}
