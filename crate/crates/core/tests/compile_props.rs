mod common;

use std::collections::HashSet;

use perception_program::compile::*;
use perception_program::model::{
    cell_of_point, make_grid, normalize_coord, redact_readouts, validate_program, CellRect,
    ImageDims, Location, NormCoord, ReadOut, Relation,
};
use perception_program::raster::Raster;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn dims(w: u32, h: u32) -> ImageDims {
    ImageDims::new(w, h).unwrap()
}

fn random_field(rng: &mut impl Rng, w: u32, h: u32) -> Vec<f64> {
    // Coarse values make exact mean ties and near-threshold differences
    // likely.
    (0..w * h)
        .map(|_| {
            if rng.gen_bool(0.5) {
                f64::from(rng.gen_range(0..=8u32)) / 8.0
            } else {
                rng.gen()
            }
        })
        .collect()
}

proptest! {
    #[test]
    fn normalize_coord_is_monotone_and_below_1000(
        w in 1u32..20_000, h in 1u32..20_000, a in 0.0f64..1.0, b in 0.0f64..1.0, y in 0.0f64..1.0,
    ) {
        let d = dims(w, h);
        let (x1, x2) = ((a.min(b) * f64::from(w)) as i64, (a.max(b) * f64::from(w)) as i64);
        let yy = (y * f64::from(h)) as i64;
        let p = normalize_coord(x1, yy, d).unwrap();
        let q = normalize_coord(x2, yy, d).unwrap();
        prop_assert!(p.x() <= q.x());
        prop_assert!(q.x() <= 999 && q.y() <= 999);
        let t = normalize_coord(yy.min(i64::from(w) - 1), x1.min(i64::from(h) - 1), d).unwrap();
        prop_assert!(t.x() <= 999 && t.y() <= 999);
    }

    #[test]
    fn grid_tiles_larger_images(w in 1u32..300, h in 1u32..300, p in 1u32..40, seed: u64) {
        prop_assume!(p <= w.min(h));
        let g = make_grid(dims(w, h), p).unwrap();
        let total: usize = g.cells().iter().map(CellRect::area).sum();
        prop_assert_eq!(total, (w * h) as usize);
        let mut rng = StdRng::seed_from_u64(seed);
        for _ in 0..50 {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let k = cell_of_point(&g, i64::from(x), i64::from(y)).unwrap();
            prop_assert!(g.cells()[k].contains(x, y));
            let expected = (common::band_of(y, h, p) * p + common::band_of(x, w, p)) as usize;
            prop_assert_eq!(k, expected);
        }
    }

    #[test]
    fn redaction_is_idempotent(seed: u64) {
        let pp = common::random_program(&mut StdRng::seed_from_u64(seed));
        let once = redact_readouts(&pp);
        prop_assert_eq!(redact_readouts(&once), once.clone());
        prop_assert!(once.is_redacted());
        prop_assert!(validate_program(&once).is_empty());
    }

    #[test]
    fn depth_matches_scan_oracle(seed: u64, w in 1u32..17, h in 1u32..17, p in 1u32..6, tau in 0.0f64..0.3) {
        prop_assume!(p <= w.min(h));
        let mut rng = StdRng::seed_from_u64(seed);
        let values = random_field(&mut rng, w, h);
        let pp = compile_depth(&DepthField::new(dims(w, h), values.clone()).unwrap(), p, tau).unwrap();
        prop_assert!(validate_program(&pp).is_empty());
        let stats = common::cell_stats_oracle(&values, w, h, p);
        for (k, &(lo, hi, _)) in stats.iter().enumerate() {
            prop_assert_eq!(pp.items[k].readout, Some(ReadOut::Interval { lo, hi }));
        }
        let emitted: HashSet<(String, String)> =
            pp.relations.iter().map(|r| (r.subject.clone(), r.object.clone())).collect();
        prop_assert_eq!(emitted.len(), pp.relations.len());
        let id = |k: usize| format!("cell_{k}");
        let mut expected = HashSet::new();
        for (a, b) in common::edge_pairs(p) {
            let (ma, mb) = (stats[a].2, stats[b].2);
            if ma > mb + tau {
                expected.insert((id(a), id(b)));
            } else if mb > ma + tau {
                expected.insert((id(b), id(a)));
            }
        }
        prop_assert_eq!(emitted, expected);
    }

    #[test]
    fn flow_direction_is_sign_of_mean(seed: u64, w in 1u32..17, h in 1u32..17, p in 1u32..6, vertical: bool) {
        prop_assume!(p <= w.min(h));
        let mut rng = StdRng::seed_from_u64(seed);
        let mut comp = || -> Vec<f64> { (0..w * h).map(|_| f64::from(rng.gen_range(-4i32..=4)) / 2.0).collect() };
        let (u, v) = (comp(), comp());
        let axis = if vertical { FlowAxis::Vertical } else { FlowAxis::Horizontal };
        let pp = compile_flow(&FlowField::new(dims(w, h), u.clone(), v.clone()).unwrap(), p, axis).unwrap();
        prop_assert!(validate_program(&pp).is_empty());
        let stats = common::cell_stats_oracle(if vertical { &v } else { &u }, w, h, p);
        for (k, s) in stats.iter().enumerate() {
            let word = match (vertical, s.2 < 0.0) {
                (false, true) => "left",
                (false, false) => "right",
                (true, true) => "up",
                (true, false) => "down",
            };
            match pp.items[k].readout {
                Some(ReadOut::Direction(d)) => prop_assert_eq!(d.as_str(), word),
                ref other => prop_assert!(false, "unexpected readout {:?}", other),
            }
        }
    }

    #[test]
    fn correspondence_normalizes_exactly(seed: u64, n in 1usize..20) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (rd, td) = (dims(rng.gen_range(1..3000), rng.gen_range(1..3000)), dims(rng.gen_range(1..3000), rng.gen_range(1..3000)));
        let mut px = |d: ImageDims| (rng.gen_range(0..d.width()), rng.gen_range(0..d.height()));
        let pairs: Vec<_> = (0..n).map(|_| (px(rd), px(td))).collect();
        let ms = MatchSet {
            ref_dims: rd,
            tgt_dims: td,
            matches: pairs.iter().map(|&(a, b)| Match {
                reference: (f64::from(a.0), f64::from(a.1)),
                target: (f64::from(b.0), f64::from(b.1)),
            }).collect(),
        };
        let pp = compile_visual_correspondence(&ms).unwrap();
        prop_assert!(validate_program(&pp).is_empty());
        prop_assert_eq!(pp.items.len(), n);
        let floor = |v: u32, n: u32| (1000 * u64::from(v) / u64::from(n)) as u32;
        for (item, &(a, b)) in pp.items.iter().zip(&pairs) {
            prop_assert_eq!(item.loc, Location::Point(NormCoord::new(floor(a.0, rd.width()), floor(a.1, rd.height())).unwrap()));
            prop_assert_eq!(item.readout, Some(ReadOut::Point(NormCoord::new(floor(b.0, td.width()), floor(b.1, td.height())).unwrap())));
        }
    }

    #[test]
    fn detections_keep_order_and_confidence(seed: u64, n in 0usize..12) {
        let mut rng = StdRng::seed_from_u64(seed);
        let d = dims(rng.gen_range(1..2000), rng.gen_range(1..2000));
        let detections: Vec<Detection> = (0..n).map(|i| {
            let (x0, x1) = (rng.gen_range(0.0..f64::from(d.width())), rng.gen_range(0.0..f64::from(d.width()) + 5.0));
            let (y0, y1) = (rng.gen_range(0.0..f64::from(d.height())), rng.gen_range(0.0..f64::from(d.height()) + 5.0));
            Detection { label: format!("l{i}"), score: rng.gen(), bbox: [x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)] }
        }).collect();
        let pp = compile_detections(&DetectionSet { dims: d, detections: detections.clone() }).unwrap();
        prop_assert!(validate_program(&pp).is_empty());
        prop_assert_eq!(pp.items.len(), n);
        for (item, det) in pp.items.iter().zip(&detections) {
            prop_assert_eq!(item.label.as_deref(), Some(det.label.as_str()));
            match item.readout {
                Some(ReadOut::Confidence(c)) => prop_assert_eq!(c.to_bits(), det.score.to_bits()),
                ref other => prop_assert!(false, "unexpected readout {:?}", other),
            }
        }
    }

    #[test]
    fn semantic_mapping_keeps_argmax(scores in proptest::collection::vec(-50.0f64..50.0, 4)) {
        let labels = ["A", "B", "C", "D"];
        let cs = CandidateScoreSet {
            dims: dims(10, 10),
            candidates: labels.iter().zip(&scores).map(|(l, &s)| Candidate { label: l.to_string(), point: (1.0, 1.0), score: s }).collect(),
        };
        let pp = compile_semantic_correspondence(&cs).unwrap();
        prop_assert!(validate_program(&pp).is_empty());
        let raw_best = (0..4).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let mapped: Vec<f64> = pp.items.iter().map(|it| match it.readout { Some(ReadOut::Score(s)) => s, _ => f64::NAN }).collect();
        let mapped_best = (0..4).fold(0, |b, i| if mapped[i] > mapped[b] { i } else { b });
        prop_assert_eq!(raw_best, mapped_best);
    }

    #[test]
    fn points_validate(seed: u64, n in 1usize..10) {
        let mut rng = StdRng::seed_from_u64(seed);
        let d = dims(rng.gen_range(1..500), rng.gen_range(1..500));
        let points = (0..n).map(|i| LabeledPoint {
            label: format!("P{i}"),
            point: (rng.gen_range(0.0..f64::from(d.width())), rng.gen_range(0.0..f64::from(d.height()))),
        }).collect();
        let pp = compile_points(&LabeledPoints { dims: d, points }).unwrap();
        prop_assert!(validate_program(&pp).is_empty());
    }
}

fn noise(rng: &mut impl Rng, w: u32, h: u32) -> Raster {
    Raster::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jigsaw_scores_in_unit_range_and_swap(seed: u64, masked: bool) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (w, h) = (rng.gen_range(12..40), rng.gen_range(12..40));
        let mut source = noise(&mut rng, w, h);
        let (rw, rh) = (rng.gen_range(4..=w / 2), rng.gen_range(4..=h / 2));
        let region = CellRect { x0: w - rw, y0: h - rh, x1: w, y1: h };
        let truth = source.crop(region);
        if masked {
            let mut data = source.data().to_vec();
            for y in region.y0..region.y1 {
                for x in region.x0..region.x1 {
                    let i = 3 * (y * w + x) as usize;
                    data[i..i + 3].fill(0.0);
                }
            }
            source = Raster::new(w, h, data).unwrap();
        }
        let mut ji = JigsawInstance {
            source,
            region,
            candidates: [truth, noise(&mut rng, rw, rh)],
            strip_width: None,
            anchor: StripAnchor::Auto,
        };
        let pp = compile_jigsaw(&ji).unwrap();
        prop_assert!(validate_program(&pp).is_empty());
        let r: Vec<f64> = pp.items.iter().map(|it| match it.readout { Some(ReadOut::Score(s)) => s, _ => f64::NAN }).collect();
        prop_assert!(r.iter().all(|s| (0.0..=1.0).contains(s)));
        ji.candidates.swap(0, 1);
        let swapped: Vec<f64> = compile_jigsaw(&ji).unwrap().items.iter().map(|it| match it.readout { Some(ReadOut::Score(s)) => s, _ => f64::NAN }).collect();
        prop_assert_eq!(&r[..2], &swapped[2..]);
        prop_assert_eq!(&r[2..], &swapped[..2]);
    }
}

#[test]
fn depth_relations_never_self_or_duplicate() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(4..12), rng.gen_range(4..12));
        let values = random_field(&mut rng, w, h);
        let pp = compile_depth(&DepthField::new(dims(w, h), values).unwrap(), 4, 0.0).unwrap();
        let set: HashSet<&Relation> = pp.relations.iter().collect();
        assert_eq!(set.len(), pp.relations.len());
        assert!(pp.relations.iter().all(|r| r.subject != r.object));
    }
}
