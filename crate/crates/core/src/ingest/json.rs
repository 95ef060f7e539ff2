//! JSON exchange documents for matches, detections, candidate scores and
//! labeled points.

use std::collections::HashSet;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::compile::{
    Candidate, CandidateScoreSet, Detection, DetectionSet, LabeledPoint, LabeledPoints, Match,
    MatchSet,
};
use crate::model::ImageDims;

/// Labels a candidates document must carry, exactly once each.
pub const CANDIDATE_LABELS: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DimsDoc {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchesDoc {
    #[serde(rename = "ref")]
    pub reference: DimsDoc,
    pub tgt: DimsDoc,
    pub matches: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionDoc {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionsDoc {
    pub image: DimsDoc,
    pub detections: Vec<DetectionDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateDoc {
    pub label: String,
    pub point: [f64; 2],
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidatesDoc {
    pub image: DimsDoc,
    pub candidates: Vec<CandidateDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointDoc {
    pub label: String,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointsDoc {
    pub image: DimsDoc,
    pub points: Vec<PointDoc>,
}

fn escape_segment(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn violation(pointer: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::SchemaViolation {
        pointer: pointer.into(),
        message: message.into(),
    }
}

/// Deserialize, reporting failures with the JSON pointer of the offending
/// value.
pub(crate) fn from_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, IngestError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        use serde_path_to_error::Segment;
        let pointer: String = e
            .path()
            .iter()
            .filter_map(|seg| match seg {
                Segment::Seq { index } => Some(format!("/{index}")),
                Segment::Map { key } => Some(format!("/{}", escape_segment(key))),
                Segment::Enum { variant } => Some(format!("/{}", escape_segment(variant))),
                Segment::Unknown => None,
            })
            .collect();
        violation(pointer, e.into_inner().to_string())
    })
}

fn dims(d: DimsDoc, pointer: &str) -> Result<ImageDims, IngestError> {
    ImageDims::new(d.width, d.height).map_err(|e| violation(pointer, e.to_string()))
}

fn finite(values: &[f64], pointer: impl Fn() -> String) -> Result<(), IngestError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(violation(pointer(), "non-finite number"))
    }
}

fn inside(p: [f64; 2], d: ImageDims, pointer: impl Fn() -> String) -> Result<(), IngestError> {
    finite(&p, &pointer)?;
    if d.contains(p[0], p[1]) {
        Ok(())
    } else {
        Err(violation(
            pointer(),
            format!(
                "point ({}, {}) outside {}x{} image",
                p[0],
                p[1],
                d.width(),
                d.height()
            ),
        ))
    }
}

fn unique_labels<'a>(
    labels: impl Iterator<Item = &'a str>,
    field: &str,
) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    for (i, l) in labels.enumerate() {
        if l.is_empty() {
            return Err(violation(format!("/{field}/{i}/label"), "empty label"));
        }
        if !seen.insert(l) {
            return Err(violation(
                format!("/{field}/{i}/label"),
                format!("duplicate label `{l}`"),
            ));
        }
    }
    Ok(())
}

pub fn parse_matches(bytes: &[u8]) -> Result<MatchSet, IngestError> {
    let doc: MatchesDoc = from_json(bytes)?;
    let ref_dims = dims(doc.reference, "/ref")?;
    let tgt_dims = dims(doc.tgt, "/tgt")?;
    let mut matches = Vec::with_capacity(doc.matches.len());
    for (i, [a, b]) in doc.matches.iter().enumerate() {
        inside(*a, ref_dims, || format!("/matches/{i}/0"))?;
        inside(*b, tgt_dims, || format!("/matches/{i}/1"))?;
        matches.push(Match {
            reference: (a[0], a[1]),
            target: (b[0], b[1]),
        });
    }
    Ok(MatchSet {
        ref_dims,
        tgt_dims,
        matches,
    })
}

pub fn parse_detections(bytes: &[u8]) -> Result<DetectionSet, IngestError> {
    let doc: DetectionsDoc = from_json(bytes)?;
    let d = dims(doc.image, "/image")?;
    let mut detections = Vec::with_capacity(doc.detections.len());
    for (i, det) in doc.detections.iter().enumerate() {
        if !det.score.is_finite() || !(0.0..=1.0).contains(&det.score) {
            return Err(violation(
                format!("/detections/{i}/score"),
                format!("score {} outside [0, 1]", det.score),
            ));
        }
        finite(&det.bbox, || format!("/detections/{i}/box"))?;
        let [x0, y0, x1, y1] = det.bbox;
        if x0 > x1 || y0 > y1 {
            return Err(violation(format!("/detections/{i}/box"), "inverted box"));
        }
        detections.push(Detection {
            label: det.label.clone(),
            score: det.score,
            bbox: det.bbox,
        });
    }
    Ok(DetectionSet {
        dims: d,
        detections,
    })
}

pub fn parse_candidates(bytes: &[u8]) -> Result<CandidateScoreSet, IngestError> {
    let doc: CandidatesDoc = from_json(bytes)?;
    let d = dims(doc.image, "/image")?;
    unique_labels(
        doc.candidates.iter().map(|c| c.label.as_str()),
        "candidates",
    )?;
    for (i, c) in doc.candidates.iter().enumerate() {
        if !CANDIDATE_LABELS.contains(&c.label.as_str()) {
            return Err(violation(
                format!("/candidates/{i}/label"),
                format!("label `{}` not in A-D", c.label),
            ));
        }
    }
    for want in CANDIDATE_LABELS {
        if !doc.candidates.iter().any(|c| c.label == want) {
            return Err(violation("/candidates", format!("missing label `{want}`")));
        }
    }
    let mut candidates = Vec::with_capacity(doc.candidates.len());
    for (i, c) in doc.candidates.iter().enumerate() {
        inside(c.point, d, || format!("/candidates/{i}/point"))?;
        finite(&[c.score], || format!("/candidates/{i}/score"))?;
        candidates.push(Candidate {
            label: c.label.clone(),
            point: (c.point[0], c.point[1]),
            score: c.score,
        });
    }
    Ok(CandidateScoreSet {
        dims: d,
        candidates,
    })
}

pub fn parse_points(bytes: &[u8]) -> Result<LabeledPoints, IngestError> {
    let doc: PointsDoc = from_json(bytes)?;
    let d = dims(doc.image, "/image")?;
    unique_labels(doc.points.iter().map(|p| p.label.as_str()), "points")?;
    let mut points = Vec::with_capacity(doc.points.len());
    for (i, p) in doc.points.iter().enumerate() {
        inside(p.point, d, || format!("/points/{i}/point"))?;
        points.push(LabeledPoint {
            label: p.label.clone(),
            point: (p.point[0], p.point[1]),
        });
    }
    Ok(LabeledPoints { dims: d, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pointer(e: IngestError) -> String {
        match e {
            IngestError::SchemaViolation { pointer, .. } => pointer,
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn matches() {
        let doc = br#"{"ref": {"width": 640, "height": 480}, "tgt": {"width": 640, "height": 480},
                       "matches": [[[160, 120], [320, 240]], [[0, 0], [1.5, 2.5]]]}"#;
        let ms = parse_matches(doc).unwrap();
        assert_eq!(ms.matches.len(), 2);
        assert_eq!(ms.matches[1].target, (1.5, 2.5));

        let bad = br#"{"ref": {"width": 4, "height": 4}, "tgt": {"width": 4, "height": 4},
                       "matches": [[[0, 0], [1, 1]], [[0, 0], [4, 1]]]}"#;
        assert_eq!(pointer(parse_matches(bad).unwrap_err()), "/matches/1/1");
        let wrong_type = br#"{"ref": {"width": 4, "height": "4"}, "tgt": {"width": 4, "height": 4}, "matches": []}"#;
        assert_eq!(
            pointer(parse_matches(wrong_type).unwrap_err()),
            "/ref/height"
        );
    }

    #[test]
    fn detections() {
        let ok = br#"{"image": {"width": 10, "height": 10},
                      "detections": [{"label": "dog", "score": 0.87, "box": [1, 2, 3, 4]}]}"#;
        assert_eq!(parse_detections(ok).unwrap().detections[0].label, "dog");
        let bad = br#"{"image": {"width": 10, "height": 10},
                       "detections": [{"label": "dog", "score": 1.2, "box": [1, 2, 3, 4]}]}"#;
        assert_eq!(
            pointer(parse_detections(bad).unwrap_err()),
            "/detections/0/score"
        );
        let missing = br#"{"image": {"width": 10, "height": 10}, "detections": [{"label": "dog", "score": 0.5}]}"#;
        assert_eq!(
            pointer(parse_detections(missing).unwrap_err()),
            "/detections/0"
        );
    }

    #[test]
    fn candidates() {
        let full = br#"{"image": {"width": 10, "height": 10}, "candidates": [
            {"label": "A", "point": [1, 1], "score": 0.9}, {"label": "B", "point": [2, 2], "score": 0.4},
            {"label": "C", "point": [3, 3], "score": 0.2}, {"label": "D", "point": [4, 4], "score": 0.6}]}"#;
        assert_eq!(parse_candidates(full).unwrap().candidates.len(), 4);
        let missing_d = br#"{"image": {"width": 10, "height": 10}, "candidates": [
            {"label": "A", "point": [1, 1], "score": 0.9}, {"label": "B", "point": [2, 2], "score": 0.4},
            {"label": "C", "point": [3, 3], "score": 0.2}]}"#;
        let e = parse_candidates(missing_d).unwrap_err();
        assert!(e.to_string().contains("missing label `D`"));
        assert_eq!(pointer(e), "/candidates");
    }

    #[test]
    fn points() {
        let ok = br#"{"image": {"width": 10, "height": 10}, "points": [{"label": "REF", "point": [1, 1]}, {"label": "A", "point": [9, 9]}]}"#;
        assert_eq!(parse_points(ok).unwrap().points.len(), 2);
        let dup = br#"{"image": {"width": 10, "height": 10}, "points": [{"label": "A", "point": [1, 1]}, {"label": "A", "point": [2, 2]}]}"#;
        assert_eq!(pointer(parse_points(dup).unwrap_err()), "/points/1/label");
    }

    #[test]
    fn pointer_escaping() {
        assert_eq!(escape_segment("a/b~c"), "a~1b~0c");
    }
}
