//! Evaluation metrics: rank correlation, reconstruction error, accuracy.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::compile::MatchSet;
use crate::model::{
    normalize_point, GeometryError, Modality, NormCoord, PerceptionProgram, ReadOut,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("expected a {expected} program, got {got}")]
    WrongModality { expected: Modality, got: Modality },
    #[error("duplicate id `{0}` in ranking")]
    DuplicateId(String),
    #[error("rankings cover different ids")]
    IdSetMismatch,
    #[error("need at least two items, got {0}")]
    TooFewItems(usize),
    #[error("rank correlation undefined: one ranking ties every item")]
    AllTied,
    #[error("item `{0}` has no usable readout")]
    MissingReadout(String),
    #[error("{truth} truth matches but {predicted} predicted items")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no answer key for task `{0}`")]
    MissingKey(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Ids ordered most prominent first. Ids in the same tier are tied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ranking {
    tiers: Vec<Vec<String>>,
}

impl Ranking {
    /// A strict order with no ties.
    pub fn strict<S: Into<String>>(
        ids: impl IntoIterator<Item = S>,
    ) -> Result<Self, AnalysisError> {
        Self::with_ties(ids.into_iter().map(|id| vec![id.into()]))
    }

    pub fn with_ties(tiers: impl IntoIterator<Item = Vec<String>>) -> Result<Self, AnalysisError> {
        let tiers: Vec<Vec<String>> = tiers.into_iter().filter(|t| !t.is_empty()).collect();
        let mut seen = HashSet::new();
        for id in tiers.iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(AnalysisError::DuplicateId(id.clone()));
            }
        }
        Ok(Self { tiers })
    }

    pub fn tiers(&self) -> &[Vec<String>] {
        &self.tiers
    }

    /// All ids in rank order, tied ids in their stored order.
    pub fn ids(&self) -> Vec<&str> {
        self.tiers.iter().flatten().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.tiers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tiers.is_empty()
    }

    fn rank_map(&self) -> HashMap<&str, usize> {
        self.tiers
            .iter()
            .enumerate()
            .flat_map(|(r, t)| t.iter().map(move |id| (id.as_str(), r)))
            .collect()
    }
}

/// Number of pairs within groups of equal consecutive keys.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort that returns the number of inversions it undid.
fn count_swaps(v: &mut [usize], buf: &mut Vec<usize>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], buf) + count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Tie-adjusted Kendall rank correlation (τ-b), computed in `O(n log n)`.
pub fn kendall_tau(a: &Ranking, b: &Ranking) -> Result<f64, AnalysisError> {
    let n = a.len();
    if n != b.len() {
        return Err(AnalysisError::IdSetMismatch);
    }
    if n < 2 {
        return Err(AnalysisError::TooFewItems(n));
    }
    let rb = b.rank_map();
    let mut pairs = Vec::with_capacity(n);
    for (ra, tier) in a.tiers.iter().enumerate() {
        for id in tier {
            let r = *rb.get(id.as_str()).ok_or(AnalysisError::IdSetMismatch)?;
            pairs.push((ra, r));
        }
    }
    pairs.sort_unstable();

    let n_pairs = (n as u64) * (n as u64 - 1) / 2;
    let ties_a = tied_pairs(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let ties_ab = tied_pairs(&pairs);
    let mut second: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let swaps = count_swaps(&mut second, &mut Vec::with_capacity(n));
    let ties_b = tied_pairs(&second);

    let (na, nb) = (n_pairs - ties_a, n_pairs - ties_b);
    if na == 0 || nb == 0 {
        return Err(AnalysisError::AllTied);
    }
    // concordant - discordant
    let s = n_pairs as i64 - ties_a as i64 - ties_b as i64 + ties_ab as i64 - 2 * swaps as i64;
    Ok(s as f64 / ((na as f64) * (nb as f64)).sqrt())
}

/// Cells by descending interval midpoint (nearest first). Cells with
/// identical midpoints share a tier, listed in row-major order.
pub fn ranking_from_depth(pp: &PerceptionProgram) -> Result<Ranking, AnalysisError> {
    if pp.modality != Modality::Depth {
        return Err(AnalysisError::WrongModality {
            expected: Modality::Depth,
            got: pp.modality,
        });
    }
    let mut scored = Vec::with_capacity(pp.items.len());
    for item in &pp.items {
        match item.readout {
            Some(ReadOut::Interval { lo, hi }) if (lo + hi).is_finite() => {
                scored.push((item.id.clone(), (lo + hi) / 2.0))
            }
            _ => return Err(AnalysisError::MissingReadout(item.id.clone())),
        }
    }
    // Stable sort keeps row-major order among equal midpoints.
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut tiers: Vec<Vec<String>> = Vec::new();
    let mut last = None;
    for (id, mid) in scored {
        if last == Some(mid) {
            tiers.last_mut().expect("tier exists").push(id);
        } else {
            tiers.push(vec![id]);
            last = Some(mid);
        }
    }
    Ranking::with_ties(tiers)
}

/// Diagonal of the normalized frame.
pub const NORMALIZED_DIAGONAL: f64 = std::f64::consts::SQRT_2 * 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementRow {
    pub id: String,
    /// True displacement between views, percent of the diagonal.
    pub displacement: f64,
    /// Distance from the predicted to the true target, percent of the
    /// diagonal.
    pub error: f64,
    /// The prediction lies strictly closer to the source point than to the
    /// true target.
    pub copied_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementSummary {
    pub count: usize,
    pub mean_displacement: f64,
    pub mean_error: f64,
    pub median_error: f64,
    pub copied_input_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementReport {
    pub rows: Vec<DisplacementRow>,
    pub summary: DisplacementSummary,
}

fn percent(d2: i64) -> f64 {
    (d2 as f64).sqrt() / NORMALIZED_DIAGONAL * 100.0
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Per-match reconstruction error against the true matches, aligned by
/// position.
pub fn displacement_error_stats(
    truth: &MatchSet,
    predicted: &PerceptionProgram,
) -> Result<DisplacementReport, AnalysisError> {
    if predicted.modality != Modality::VisualCorrespondence {
        return Err(AnalysisError::WrongModality {
            expected: Modality::VisualCorrespondence,
            got: predicted.modality,
        });
    }
    if truth.matches.len() != predicted.items.len() {
        return Err(AnalysisError::LengthMismatch {
            truth: truth.matches.len(),
            predicted: predicted.items.len(),
        });
    }
    let mut rows = Vec::with_capacity(truth.matches.len());
    for (m, item) in truth.matches.iter().zip(&predicted.items) {
        let c = normalize_point(m.reference.0, m.reference.1, truth.ref_dims)?;
        let r = normalize_point(m.target.0, m.target.1, truth.tgt_dims)?;
        let p: NormCoord = match item.readout {
            Some(ReadOut::Point(p)) => p,
            _ => return Err(AnalysisError::MissingReadout(item.id.clone())),
        };
        rows.push(DisplacementRow {
            id: item.id.clone(),
            displacement: percent(c.dist2(&r)),
            error: percent(p.dist2(&r)),
            copied_input: p.dist2(&c) < p.dist2(&r),
        });
    }
    let count = rows.len();
    let n = count as f64;
    let mut errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let summary = DisplacementSummary {
        count,
        mean_displacement: rows.iter().map(|r| r.displacement).sum::<f64>() / n,
        mean_error: errors.iter().sum::<f64>() / n,
        median_error: median(&mut errors),
        copied_input_fraction: rows.iter().filter(|r| r.copied_input).count() as f64 / n,
    };
    Ok(DisplacementReport { rows, summary })
}

/// Percent correct, rounded to two decimals. An empty prediction list
/// scores 0.
pub fn accuracy(
    predictions: &[(String, String)],
    keys: &[(String, String)],
) -> Result<f64, AnalysisError> {
    let keys: HashMap<&str, &str> = keys.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
    let mut correct = 0usize;
    for (id, label) in predictions {
        let key = keys
            .get(id.as_str())
            .ok_or_else(|| AnalysisError::MissingKey(id.clone()))?;
        if key == label {
            correct += 1;
        }
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    Ok(round2(100.0 * correct as f64 / predictions.len() as f64))
}

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}
