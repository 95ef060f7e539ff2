#![allow(dead_code)]

use perception_program::model::{
    Direction, GridShape, ImageDims, ImageRef, Item, Location, Modality, NormBox, NormCoord,
    PerceptionProgram, ReadOut, Relation,
};
use rand::seq::SliceRandom;
use rand::Rng;

const CHARS: &[char] = &[
    'a', 'b', 'z', 'A', 'Q', '0', '7', '_', '-', '.', ' ', ':', ',', '{', '}', '[', ']', '"', '\'',
    '#', '\\', '/', '\t', '\n', '\u{1}', 'é', '漢', '🙂',
];

pub fn random_text(rng: &mut impl Rng) -> String {
    if rng.gen_bool(0.5) {
        // Mostly plain identifiers.
        let n = rng.gen_range(1..8);
        (0..n)
            .map(|_| *b"akZ3_".choose(rng).unwrap() as char)
            .collect()
    } else {
        let n = rng.gen_range(0..10);
        (0..n).map(|_| *CHARS.choose(rng).unwrap()).collect()
    }
}

fn unique_ids(rng: &mut impl Rng, n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let id = if rng.gen_bool(0.3) {
            format!("i{}", out.len())
        } else {
            random_text(rng)
        };
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

pub fn coord(rng: &mut impl Rng) -> NormCoord {
    NormCoord::new(rng.gen_range(0..=1000), rng.gen_range(0..=1000)).unwrap()
}

pub fn norm_box(rng: &mut impl Rng) -> NormBox {
    let (a, b) = (rng.gen_range(0..=1000), rng.gen_range(0..=1000));
    let (c, d) = (rng.gen_range(0..=1000), rng.gen_range(0..=1000));
    NormBox::new(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap()
}

/// A value in `[0, 1]` that is sometimes an exact decimal tie or an edge.
pub fn unit(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..6) {
        0 => 0.0,
        1 => 1.0,
        2 => f64::from(rng.gen_range(0..=2000u32)) / 2000.0,
        _ => rng.gen(),
    }
}

fn readout(rng: &mut impl Rng, modality: Modality) -> Option<ReadOut> {
    if rng.gen_bool(0.1) {
        return None;
    }
    Some(match modality {
        Modality::Depth => {
            let (a, b) = (unit(rng), unit(rng));
            ReadOut::Interval {
                lo: a.min(b),
                hi: a.max(b),
            }
        }
        Modality::Flow => ReadOut::Direction(
            *[
                Direction::Left,
                Direction::Right,
                Direction::Up,
                Direction::Down,
            ]
            .choose(rng)
            .unwrap(),
        ),
        Modality::VisualCorrespondence => ReadOut::Point(coord(rng)),
        Modality::Jigsaw | Modality::SemanticCorrespondence => ReadOut::Score(unit(rng)),
        Modality::Detection => ReadOut::Confidence(unit(rng)),
        Modality::Points => return None,
    })
}

/// A random program that passes validation.
pub fn random_program(rng: &mut impl Rng) -> PerceptionProgram {
    let modality = *Modality::ALL.choose(rng).unwrap();
    let n_images = rng.gen_range(0..3);
    let images = unique_ids(rng, n_images)
        .into_iter()
        .map(|id| {
            ImageRef::new(
                id,
                ImageDims::new(rng.gen_range(1..5000), rng.gen_range(1..5000)).unwrap(),
            )
        })
        .collect();
    let mut pp = PerceptionProgram::new(modality, images);

    let n_items = match modality {
        Modality::Depth | Modality::Flow if rng.gen_bool(0.7) => {
            let p = rng.gen_range(1..5);
            pp.grid = Some(GridShape { rows: p, cols: p });
            (p * p) as usize
        }
        Modality::Detection => rng.gen_range(0..6),
        _ => rng.gen_range(1..7),
    };
    for id in unique_ids(rng, n_items) {
        let loc = if modality.uses_boxes() {
            Location::Box(norm_box(rng))
        } else {
            Location::Point(coord(rng))
        };
        let mut item = Item::new(id, loc, readout(rng, modality));
        if modality == Modality::Detection || rng.gen_bool(0.2) {
            item = item.with_label(random_text(rng));
        }
        pp.items.push(item);
    }
    if pp.items.len() >= 2 {
        for _ in 0..rng.gen_range(0..5) {
            let a = rng.gen_range(0..pp.items.len());
            let mut b = rng.gen_range(0..pp.items.len());
            if a == b {
                b = (b + 1) % pp.items.len();
            }
            let predicate = if rng.gen_bool(0.5) {
                "in-front-of".to_string()
            } else {
                random_text(rng)
            };
            pp.relations.push(Relation::new(
                pp.items[a].id.clone(),
                predicate,
                pp.items[b].id.clone(),
            ));
        }
    }
    pp
}

/// Grid row (or column) holding pixel `p` along an axis of length `n` split
/// into `order` bands, found by scanning the band boundaries.
pub fn band_of(p: u32, n: u32, order: u32) -> u32 {
    (0..order)
        .find(|&i| i * n / order <= p && p < (i + 1) * n / order)
        .expect("every pixel lies in some band")
}

/// Per-cell (min, max, mean) of a row-major field, by a full image scan.
pub fn cell_stats_oracle(values: &[f64], w: u32, h: u32, order: u32) -> Vec<(f64, f64, f64)> {
    let k = (order * order) as usize;
    let mut min = vec![f64::INFINITY; k];
    let mut max = vec![f64::NEG_INFINITY; k];
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for y in 0..h {
        let row = band_of(y, h, order);
        for x in 0..w {
            let c = (row * order + band_of(x, w, order)) as usize;
            let v = values[(y * w + x) as usize];
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
            sum[c] += v;
            count[c] += 1;
        }
    }
    (0..k)
        .map(|c| (min[c], max[c], sum[c] / count[c] as f64))
        .collect()
}

/// Every unordered pair of cells that share an edge.
pub fn edge_pairs(order: u32) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..order * order {
        for b in a + 1..order * order {
            let (ra, ca) = (a / order, a % order);
            let (rb, cb) = (b / order, b % order);
            if ra.abs_diff(rb) + ca.abs_diff(cb) == 1 {
                out.push((a as usize, b as usize));
            }
        }
    }
    out
}

/// `(concordant - discordant) / sqrt((n0 - ties_a) (n0 - ties_b))` by
/// enumerating every pair of positions.
pub fn kendall_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut s, mut ta, mut tb, mut n0) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            n0 += 1;
            let da = (a[i] as i64 - a[j] as i64).signum();
            let db = (b[i] as i64 - b[j] as i64).signum();
            if da == 0 {
                ta += 1;
            }
            if db == 0 {
                tb += 1;
            }
            s += da * db;
        }
    }
    s as f64 / (((n0 - ta) as f64) * ((n0 - tb) as f64)).sqrt()
}

/// One fixture program per modality, paired with its golden file name.
pub fn golden_programs() -> Vec<(&'static str, PerceptionProgram)> {
    use perception_program::compile::*;
    let d = |w, h| ImageDims::new(w, h).unwrap();

    let ramp = (0..16).map(|i| f64::from(i % 4) / 3.0).collect();
    let depth = compile_depth(&DepthField::new(d(4, 4), ramp).unwrap(), 2, DEFAULT_TAU).unwrap();

    let u = (0..16)
        .map(|i| if i % 4 < 2 { -1.0 } else { 1.0 })
        .collect();
    let flow = compile_flow(
        &FlowField::new(d(4, 4), u, vec![0.0; 16]).unwrap(),
        2,
        FlowAxis::Horizontal,
    )
    .unwrap();

    let vc = compile_visual_correspondence(&MatchSet {
        ref_dims: d(640, 480),
        tgt_dims: d(640, 480),
        matches: vec![
            Match {
                reference: (160.0, 120.0),
                target: (320.0, 240.0),
            },
            Match {
                reference: (0.0, 0.0),
                target: (639.5, 479.9),
            },
        ],
    })
    .unwrap();

    let mut jigsaw = PerceptionProgram::new(
        Modality::Jigsaw,
        vec![
            ImageRef::new("img0", d(40, 30)),
            ImageRef::new("img1", d(20, 15)),
            ImageRef::new("img2", d(20, 15)),
        ],
    );
    let left = NormBox::new(0, 0, 150, 933).unwrap();
    let top = NormBox::new(0, 0, 950, 200).unwrap();
    for (id, b, s) in [
        ("left_A", left, 1.0),
        ("top_A", top, 1.0),
        ("left_B", left, 0.4567),
        ("top_B", top, 0.12345),
    ] {
        jigsaw
            .items
            .push(Item::new(id, Location::Box(b), Some(ReadOut::Score(s))));
    }

    let det = compile_detections(&DetectionSet {
        dims: d(640, 480),
        detections: vec![
            Detection {
                label: "dog".into(),
                score: 0.87,
                bbox: [32.0, 48.0, 128.0, 256.0],
            },
            Detection {
                label: "traffic light".into(),
                score: 0.5,
                bbox: [0.0, 0.0, 640.0, 480.0],
            },
        ],
    })
    .unwrap();

    let sem = compile_semantic_correspondence(&CandidateScoreSet {
        dims: d(100, 100),
        candidates: [
            ("A", (10.0, 20.0), 0.91),
            ("B", (30.0, 40.0), 0.4),
            ("C", (50.0, 60.0), 0.22),
            ("D", (70.0, 80.0), 0.63),
        ]
        .iter()
        .map(|&(l, point, score)| Candidate {
            label: l.into(),
            point,
            score,
        })
        .collect(),
    })
    .unwrap();

    let points = compile_points(&LabeledPoints {
        dims: d(1000, 1000),
        points: [
            ("REF", (100.0, 100.0)),
            ("A", (110.0, 105.0)),
            ("B", (500.0, 500.0)),
        ]
        .iter()
        .map(|&(l, point)| LabeledPoint {
            label: l.into(),
            point,
        })
        .collect(),
    })
    .unwrap();

    vec![
        ("depth", depth),
        ("flow", flow),
        ("visual_correspondence", vc),
        ("jigsaw", jigsaw),
        ("detection", det),
        ("semantic_correspondence", sem),
        ("points", points),
    ]
}

pub fn golden_text(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.p2"));
    std::fs::read_to_string(path).unwrap()
}
