//! Deterministic solvers that answer benchmark questions from programs alone.
//!
//! Ties are broken alphabetically by label so results do not depend on item
//! order.

use std::cmp::Ordering;

use thiserror::Error;

use crate::compile::JIGSAW_IDS;
use crate::model::{
    make_grid, Direction, GeometryError, GridSpec, Location, Modality, NormBox, NormCoord,
    PerceptionProgram, ReadOut,
};

pub const REF_ID: &str = "REF";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("expected a {expected} program, got {got}")]
    WrongModality { expected: Modality, got: Modality },
    #[error("depth program has no grid")]
    MissingGrid,
    #[error("point `{0}` lies outside the grid")]
    PointOutsideGrid(String),
    #[error("item `{0}` has no readout")]
    MissingReadout(String),
    #[error("item `{0}` has the wrong location or readout kind")]
    BadItem(String),
    #[error("missing items: {}", .0.join(", "))]
    MissingItems(Vec<String>),
    #[error("no `REF` item")]
    MissingRef,
    #[error("empty input")]
    EmptyInput,
    #[error("tied vote")]
    TieVote,
    #[error("no detections")]
    NoDetections,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn expect(pp: &PerceptionProgram, modality: Modality) -> Result<(), SolveError> {
    if pp.modality == modality {
        Ok(())
    } else {
        Err(SolveError::WrongModality {
            expected: modality,
            got: pp.modality,
        })
    }
}

fn point_of(id: &str, loc: &Location) -> Result<NormCoord, SolveError> {
    loc.as_point()
        .ok_or_else(|| SolveError::BadItem(id.to_string()))
}

/// Pick the best of `(label, key)` pairs: largest key, then smallest label.
fn argmax_by<'a, K: PartialOrd>(it: impl IntoIterator<Item = (&'a str, K)>) -> Option<&'a str> {
    let mut best: Option<(&str, K)> = None;
    for (label, key) in it {
        let better = match &best {
            None => true,
            Some((bl, bk)) => match key.partial_cmp(bk) {
                Some(Ordering::Greater) => true,
                Some(Ordering::Equal) => label < *bl,
                _ => false,
            },
        };
        if better {
            best = Some((label, key));
        }
    }
    best.map(|(l, _)| l)
}

/// Normalized bounds of grid boundaries along one axis. The last boundary is
/// 1000, so a coordinate of exactly 1000 lies outside every cell.
fn normalized_bounds(grid: &GridSpec, horizontal: bool) -> Vec<u32> {
    let dims = grid.dims();
    let n = grid.order();
    let extent = if horizontal {
        dims.width()
    } else {
        dims.height()
    };
    (0..=n)
        .map(|i| {
            let pixel = u64::from(i) * u64::from(extent) / u64::from(n);
            (pixel * 1000 / u64::from(extent)) as u32
        })
        .collect()
}

fn bin(bounds: &[u32], v: u32) -> Option<u32> {
    bounds
        .windows(2)
        .position(|w| w[0] <= v && v < w[1])
        .map(|i| i as u32)
}

/// Label of the nearest point: each point is scored by the midpoint of the
/// depth interval of the cell containing it. Ties go to the larger lower
/// bound, then the alphabetically first label.
pub fn solve_relative_depth(
    points: &PerceptionProgram,
    depth: &PerceptionProgram,
) -> Result<String, SolveError> {
    expect(points, Modality::Points)?;
    expect(depth, Modality::Depth)?;
    let shape = depth.grid.ok_or(SolveError::MissingGrid)?;
    let image = depth.images.first().ok_or(SolveError::MissingGrid)?;
    if shape.rows != shape.cols {
        return Err(SolveError::MissingGrid);
    }
    let grid = make_grid(image.dims, shape.rows)?;
    if depth.items.len() != grid.len() {
        return Err(SolveError::MissingItems(vec![format!(
            "{} grid cells, {} items",
            grid.len(),
            depth.items.len()
        )]));
    }
    let cols = normalized_bounds(&grid, true);
    let rows = normalized_bounds(&grid, false);

    let mut scored = Vec::with_capacity(points.items.len());
    for item in &points.items {
        let p = point_of(&item.id, &item.loc)?;
        let outside = || SolveError::PointOutsideGrid(item.id.clone());
        let col = bin(&cols, u32::from(p.x())).ok_or_else(outside)?;
        let row = bin(&rows, u32::from(p.y())).ok_or_else(outside)?;
        let cell = &depth.items[grid.index(row, col)];
        match cell.readout {
            Some(ReadOut::Interval { lo, hi }) => {
                scored.push((item.id.as_str(), ((lo + hi) / 2.0, lo)))
            }
            Some(_) => return Err(SolveError::BadItem(cell.id.clone())),
            None => return Err(SolveError::MissingReadout(cell.id.clone())),
        }
    }
    argmax_by(scored)
        .map(str::to_string)
        .ok_or(SolveError::EmptyInput)
}

/// How camera motion relates to the apparent motion of the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraConvention {
    /// The scene appears to move opposite to the camera.
    #[default]
    OpposesFlow,
    FollowsFlow,
}

impl CameraConvention {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "camera_opposes_flow" | "opposes" => Some(Self::OpposesFlow),
            "camera_follows_flow" | "follows" => Some(Self::FollowsFlow),
            _ => None,
        }
    }
}

fn opposite(d: Direction) -> Direction {
    match d {
        Direction::Left => Direction::Right,
        Direction::Right => Direction::Left,
        Direction::Up => Direction::Down,
        Direction::Down => Direction::Up,
    }
}

/// Camera direction from a majority vote over cell directions.
pub fn solve_multiview(
    flow: &PerceptionProgram,
    convention: CameraConvention,
) -> Result<Direction, SolveError> {
    expect(flow, Modality::Flow)?;
    if flow.items.is_empty() {
        return Err(SolveError::EmptyInput);
    }
    let order = [
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
    ];
    let mut votes = [0usize; 4];
    for item in &flow.items {
        match item.readout {
            Some(ReadOut::Direction(d)) => {
                votes[order
                    .iter()
                    .position(|o| *o == d)
                    .expect("all directions listed")] += 1
            }
            Some(_) => return Err(SolveError::BadItem(item.id.clone())),
            None => return Err(SolveError::MissingReadout(item.id.clone())),
        }
    }
    let top = *votes.iter().max().expect("four counters");
    let mut winners = order.iter().zip(votes).filter(|(_, v)| *v == top);
    let (scene, _) = winners.next().expect("max exists");
    if winners.next().is_some() {
        return Err(SolveError::TieVote);
    }
    Ok(match convention {
        CameraConvention::OpposesFlow => opposite(*scene),
        CameraConvention::FollowsFlow => *scene,
    })
}

fn nearest<'a>(
    target: NormCoord,
    candidates: impl IntoIterator<Item = (&'a str, NormCoord)>,
) -> Option<&'a str> {
    argmax_by(candidates.into_iter().map(|(l, p)| (l, -p.dist2(&target))))
}

/// Alternative closest to `REF` in normalized coordinates.
pub fn naive_correspondence(points: &PerceptionProgram) -> Result<String, SolveError> {
    expect(points, Modality::Points)?;
    let reference = points.item(REF_ID).ok_or(SolveError::MissingRef)?;
    let r = point_of(REF_ID, &reference.loc)?;
    let mut alts = Vec::new();
    for item in points.items.iter().filter(|it| it.id != REF_ID) {
        alts.push((item.id.as_str(), point_of(&item.id, &item.loc)?));
    }
    nearest(r, alts)
        .map(str::to_string)
        .ok_or(SolveError::EmptyInput)
}

/// Map `reference` through its nearest match, then return the alternative
/// closest to the mapped point.
pub fn oracle_correspondence(
    matches: &PerceptionProgram,
    reference: NormCoord,
    alternatives: &PerceptionProgram,
) -> Result<String, SolveError> {
    expect(matches, Modality::VisualCorrespondence)?;
    expect(alternatives, Modality::Points)?;
    let mut sources = Vec::with_capacity(matches.items.len());
    for item in &matches.items {
        sources.push((item.id.as_str(), point_of(&item.id, &item.loc)?));
    }
    let chosen = nearest(reference, sources).ok_or(SolveError::EmptyInput)?;
    let mapped = match matches.item(chosen).and_then(|it| it.readout.as_ref()) {
        Some(ReadOut::Point(p)) => *p,
        Some(_) => return Err(SolveError::BadItem(chosen.to_string())),
        None => return Err(SolveError::MissingReadout(chosen.to_string())),
    };
    let mut alts = Vec::new();
    for item in alternatives.items.iter().filter(|it| it.id != REF_ID) {
        alts.push((item.id.as_str(), point_of(&item.id, &item.loc)?));
    }
    nearest(mapped, alts)
        .map(str::to_string)
        .ok_or(SolveError::EmptyInput)
}

fn score_of(pp: &PerceptionProgram, id: &str) -> Result<f64, SolveError> {
    match pp.item(id).map(|it| &it.readout) {
        Some(Some(ReadOut::Score(s))) | Some(Some(ReadOut::Confidence(s))) => Ok(*s),
        Some(Some(_)) => Err(SolveError::BadItem(id.to_string())),
        Some(None) => Err(SolveError::MissingReadout(id.to_string())),
        None => Err(SolveError::MissingItems(vec![id.to_string()])),
    }
}

/// `"A"` or `"B"`: the candidate with the larger mean edge score, `"A"` on a
/// tie.
pub fn solve_jigsaw(pp: &PerceptionProgram) -> Result<&'static str, SolveError> {
    expect(pp, Modality::Jigsaw)?;
    let missing: Vec<String> = JIGSAW_IDS
        .iter()
        .filter(|id| pp.item(id).is_none())
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(SolveError::MissingItems(missing));
    }
    let s: Vec<f64> = JIGSAW_IDS
        .iter()
        .map(|id| score_of(pp, id))
        .collect::<Result<_, _>>()?;
    let (a, b) = ((s[0] + s[1]) / 2.0, (s[2] + s[3]) / 2.0);
    Ok(if b > a { "B" } else { "A" })
}

/// Label of the highest-scoring candidate.
pub fn solve_semantic(pp: &PerceptionProgram) -> Result<String, SolveError> {
    expect(pp, Modality::SemanticCorrespondence)?;
    let mut scored = Vec::with_capacity(pp.items.len());
    for item in &pp.items {
        scored.push((item.id.as_str(), score_of(pp, &item.id)?));
    }
    argmax_by(scored)
        .map(str::to_string)
        .ok_or(SolveError::EmptyInput)
}

/// Candidate box with the highest IoU against the most confident detection
/// of `target_label` (any detection when none carries that label).
pub fn solve_localization(
    dets: &PerceptionProgram,
    candidates: &[(String, NormBox)],
    target_label: &str,
) -> Result<String, SolveError> {
    expect(dets, Modality::Detection)?;
    if candidates.is_empty() {
        return Err(SolveError::EmptyInput);
    }
    let matching: Vec<_> = dets
        .items
        .iter()
        .filter(|it| {
            it.label
                .as_deref()
                .is_some_and(|l| l.eq_ignore_ascii_case(target_label))
        })
        .collect();
    let pool = if matching.is_empty() {
        dets.items.iter().collect()
    } else {
        matching
    };
    let mut scored = Vec::with_capacity(pool.len());
    for item in &pool {
        scored.push((item.id.as_str(), score_of(dets, &item.id)?));
    }
    let best = argmax_by(scored).ok_or(SolveError::NoDetections)?;
    let best_box = dets
        .item(best)
        .and_then(|it| it.loc.as_box())
        .ok_or_else(|| SolveError::BadItem(best.to_string()))?;
    argmax_by(
        candidates
            .iter()
            .map(|(l, b)| (l.as_str(), b.iou(&best_box))),
    )
    .map(str::to_string)
    .ok_or(SolveError::EmptyInput)
}
