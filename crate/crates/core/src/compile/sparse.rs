//! Point-like modalities: matches, detections, candidate scores and plain
//! labeled points.

use std::collections::HashSet;

use super::CompileError;
use crate::model::{
    normalize_box, normalize_point, ImageDims, ImageRef, Item, Location, Modality,
    PerceptionProgram, ReadOut,
};

/// A reference-to-target keypoint pair in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub reference: (f64, f64),
    pub target: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub ref_dims: ImageDims,
    pub tgt_dims: ImageDims,
    pub matches: Vec<Match>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    /// `[x0, y0, x1, y1]` in pixels.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub dims: ImageDims,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: String,
    pub point: (f64, f64),
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScoreSet {
    pub dims: ImageDims,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub label: String,
    pub point: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub dims: ImageDims,
    pub points: Vec<LabeledPoint>,
}

fn check_unique<'a>(labels: impl Iterator<Item = &'a str>) -> Result<(), CompileError> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(CompileError::DuplicateLabel(l.to_string()));
        }
    }
    Ok(())
}

/// One item `m<i>` per match: `c` is the reference point, `r` the target.
pub fn compile_visual_correspondence(ms: &MatchSet) -> Result<PerceptionProgram, CompileError> {
    if ms.matches.is_empty() {
        return Err(CompileError::EmptyInput);
    }
    let mut pp = PerceptionProgram::new(
        Modality::VisualCorrespondence,
        vec![
            ImageRef::new("img0", ms.ref_dims),
            ImageRef::new("img1", ms.tgt_dims),
        ],
    );
    for (i, m) in ms.matches.iter().enumerate() {
        let c = normalize_point(m.reference.0, m.reference.1, ms.ref_dims)?;
        let r = normalize_point(m.target.0, m.target.1, ms.tgt_dims)?;
        pp.items.push(Item::new(
            format!("m{i}"),
            Location::Point(c),
            Some(ReadOut::Point(r)),
        ));
    }
    Ok(pp)
}

/// One item `det_<i>` per detection with a normalized box, the confidence as
/// readout and the category as label.
pub fn compile_detections(ds: &DetectionSet) -> Result<PerceptionProgram, CompileError> {
    let mut pp = PerceptionProgram::new(Modality::Detection, vec![ImageRef::new("img0", ds.dims)]);
    for (i, d) in ds.detections.iter().enumerate() {
        let id = format!("det_{i}");
        if !d.score.is_finite() || !(0.0..=1.0).contains(&d.score) {
            return Err(CompileError::ScoreRange { id, score: d.score });
        }
        let [x0, y0, x1, y1] = d.bbox;
        let b = normalize_box(x0, y0, x1, y1, ds.dims)?;
        pp.items.push(
            Item::new(id, Location::Box(b), Some(ReadOut::Confidence(d.score)))
                .with_label(d.label.clone()),
        );
    }
    Ok(pp)
}

/// Map raw similarity scores into `[0, 1]`: unchanged when they already fit,
/// min-max scaled otherwise. A degenerate range maps to 1.
pub fn map_scores(raw: &[f64]) -> Vec<f64> {
    if raw.iter().all(|s| (0.0..=1.0).contains(s)) {
        return raw.to_vec();
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    raw.iter()
        .map(|s| {
            if span > 0.0 {
                ((s - min) / span).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect()
}

/// One item per candidate, keyed by its label, scored by the (mapped)
/// feature similarity. No `b` label: the id already names the option.
pub fn compile_semantic_correspondence(
    cs: &CandidateScoreSet,
) -> Result<PerceptionProgram, CompileError> {
    if cs.candidates.is_empty() {
        return Err(CompileError::EmptyInput);
    }
    check_unique(cs.candidates.iter().map(|c| c.label.as_str()))?;
    if let Some(c) = cs.candidates.iter().find(|c| !c.score.is_finite()) {
        return Err(CompileError::NonFiniteScore(c.label.clone()));
    }
    let raw: Vec<f64> = cs.candidates.iter().map(|c| c.score).collect();
    let mapped = map_scores(&raw);

    let mut pp = PerceptionProgram::new(
        Modality::SemanticCorrespondence,
        vec![ImageRef::new("img0", cs.dims)],
    );
    for (c, score) in cs.candidates.iter().zip(mapped) {
        let loc = normalize_point(c.point.0, c.point.1, cs.dims)?;
        pp.items.push(Item::new(
            c.label.clone(),
            Location::Point(loc),
            Some(ReadOut::Score(score)),
        ));
    }
    Ok(pp)
}

/// Locations of the labeled answer options, without readouts.
pub fn compile_points(lp: &LabeledPoints) -> Result<PerceptionProgram, CompileError> {
    if lp.points.is_empty() {
        return Err(CompileError::EmptyInput);
    }
    check_unique(lp.points.iter().map(|p| p.label.as_str()))?;
    let mut pp = PerceptionProgram::new(Modality::Points, vec![ImageRef::new("img0", lp.dims)]);
    for p in &lp.points {
        let loc = normalize_point(p.point.0, p.point.1, lp.dims)?;
        pp.items
            .push(Item::new(p.label.clone(), Location::Point(loc), None));
    }
    Ok(pp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_program, GeometryError, NormCoord};

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn pt(x: u32, y: u32) -> NormCoord {
        NormCoord::new(x, y).unwrap()
    }

    fn matches(pairs: &[((f64, f64), (f64, f64))]) -> MatchSet {
        MatchSet {
            ref_dims: dims(640, 480),
            tgt_dims: dims(640, 480),
            matches: pairs
                .iter()
                .map(|&(reference, target)| Match { reference, target })
                .collect(),
        }
    }

    #[test]
    fn correspondence() {
        let pp =
            compile_visual_correspondence(&matches(&[((160.0, 120.0), (320.0, 240.0))])).unwrap();
        assert_eq!(pp.items[0].id, "m0");
        assert_eq!(pp.items[0].loc, Location::Point(pt(250, 250)));
        assert_eq!(pp.items[0].readout, Some(ReadOut::Point(pt(500, 500))));
        assert!(validate_program(&pp).is_empty());

        let pp = compile_visual_correspondence(&matches(&[((0.0, 0.0), (0.0, 0.0))])).unwrap();
        assert_eq!(pp.items[0].readout, Some(ReadOut::Point(pt(0, 0))));

        assert!(matches!(
            compile_visual_correspondence(&matches(&[((0.0, 0.0), (640.0, 480.0))])),
            Err(CompileError::Geometry(GeometryError::OutOfBounds { .. }))
        ));
        assert_eq!(
            compile_visual_correspondence(&matches(&[])),
            Err(CompileError::EmptyInput)
        );
    }

    #[test]
    fn detections() {
        let ds = DetectionSet {
            dims: dims(640, 480),
            detections: vec![
                Detection {
                    label: "dog".into(),
                    score: 0.87,
                    bbox: [32.0, 48.0, 128.0, 256.0],
                },
                Detection {
                    label: "cat".into(),
                    score: 0.5,
                    bbox: [0.0, 0.0, 640.0, 480.0],
                },
            ],
        };
        let pp = compile_detections(&ds).unwrap();
        assert_eq!(pp.items[0].id, "det_0");
        assert_eq!(pp.items[1].id, "det_1");
        assert_eq!(
            pp.items[0].loc.as_box().unwrap().corners(),
            [50, 100, 200, 533]
        );
        assert_eq!(pp.items[0].readout, Some(ReadOut::Confidence(0.87)));
        assert_eq!(pp.items[0].label.as_deref(), Some("dog"));
        assert!(validate_program(&pp).is_empty());

        let empty = compile_detections(&DetectionSet {
            dims: dims(10, 10),
            detections: vec![],
        })
        .unwrap();
        assert!(empty.items.is_empty());
        assert!(validate_program(&empty).is_empty());
    }

    fn candidates(scores: &[(&str, f64)]) -> CandidateScoreSet {
        CandidateScoreSet {
            dims: dims(100, 100),
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, &(label, score))| Candidate {
                    label: label.into(),
                    point: (10.0 * i as f64, 5.0),
                    score,
                })
                .collect(),
        }
    }

    fn scores(pp: &PerceptionProgram) -> Vec<f64> {
        pp.items
            .iter()
            .map(|it| match it.readout {
                Some(ReadOut::Score(s)) => s,
                _ => panic!(),
            })
            .collect()
    }

    #[test]
    fn semantic_mapping() {
        let cs = candidates(&[("A", 0.91), ("B", 0.40), ("C", 0.22), ("D", 0.63)]);
        let pp = compile_semantic_correspondence(&cs).unwrap();
        assert_eq!(scores(&pp), vec![0.91, 0.40, 0.22, 0.63]);
        assert!(pp.items.iter().all(|it| it.label.is_none()));

        let cs = candidates(&[("A", 12.0), ("B", 2.0), ("C", 7.0), ("D", 2.0)]);
        let pp = compile_semantic_correspondence(&cs).unwrap();
        assert_eq!(scores(&pp), vec![1.0, 0.0, 0.5, 0.0]);

        let cs = candidates(&[("A", 3.5)]);
        assert_eq!(
            scores(&compile_semantic_correspondence(&cs).unwrap()),
            vec![1.0]
        );

        assert_eq!(
            compile_semantic_correspondence(&candidates(&[])),
            Err(CompileError::EmptyInput)
        );
        assert!(matches!(
            compile_semantic_correspondence(&candidates(&[("A", 0.1), ("A", 0.2)])),
            Err(CompileError::DuplicateLabel(_))
        ));
    }

    #[test]
    fn points() {
        let lp = LabeledPoints {
            dims: dims(1000, 1000),
            points: vec![
                LabeledPoint {
                    label: "A".into(),
                    point: (100.0, 100.0),
                },
                LabeledPoint {
                    label: "B".into(),
                    point: (500.0, 400.0),
                },
            ],
        };
        let pp = compile_points(&lp).unwrap();
        assert_eq!(pp.items[1].loc, Location::Point(pt(500, 400)));
        assert!(pp.items.iter().all(|it| it.readout.is_none()));
        assert!(validate_program(&pp).is_empty());

        let mut dup = lp.clone();
        dup.points[1].label = "A".into();
        assert_eq!(
            compile_points(&dup),
            Err(CompileError::DuplicateLabel("A".into()))
        );
    }
}
