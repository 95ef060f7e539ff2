//! Strip similarity metrics used to score jigsaw edge continuity.
//!
//! Three views of the same pair of strips: structure (windowed SSIM on luma),
//! edges (normalized cross-correlation of gradient magnitudes) and colour
//! (chi-squared distance between HSV histograms). Each is mapped
//! monotonically into `[0, 1]` so that they can be averaged.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("strip shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((u32, u32, u8), (u32, u32, u8)),
    #[error("expected a {expected}-channel strip, got {got}")]
    ChannelCount { expected: u8, got: u8 },
    #[error("strip sample count {got} does not match {width}x{height}x{channels}")]
    SampleCount {
        got: usize,
        width: u32,
        height: u32,
        channels: u8,
    },
    #[error("strip samples must be finite and within [0, 1]")]
    SampleRange,
    #[error("strip must be at least 1x1")]
    Empty,
}

/// SSIM window edge length.
pub const SSIM_WINDOW: u32 = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub const HUE_BINS: usize = 16;
pub const SAT_BINS: usize = 8;
pub const VAL_BINS: usize = 8;
const CHI2_EPS: f64 = 1e-10;

/// Row-major image patch with 1 (luma) or 3 (RGB) interleaved channels,
/// samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strip {
    width: u32,
    height: u32,
    channels: u8,
    samples: Vec<f64>,
}

impl Strip {
    pub fn new(
        width: u32,
        height: u32,
        channels: u8,
        samples: Vec<f64>,
    ) -> Result<Self, MetricError> {
        if width == 0 || height == 0 {
            return Err(MetricError::Empty);
        }
        if channels != 1 && channels != 3 {
            return Err(MetricError::ChannelCount {
                expected: 3,
                got: channels,
            });
        }
        if samples.len() != width as usize * height as usize * channels as usize {
            return Err(MetricError::SampleCount {
                got: samples.len(),
                width,
                height,
                channels,
            });
        }
        if !samples
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
        {
            return Err(MetricError::SampleRange);
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn luma(width: u32, height: u32, samples: Vec<f64>) -> Result<Self, MetricError> {
        Self::new(width, height, 1, samples)
    }

    pub fn rgb(width: u32, height: u32, samples: Vec<f64>) -> Result<Self, MetricError> {
        Self::new(width, height, 3, samples)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    fn shape(&self) -> (u32, u32, u8) {
        (self.width, self.height, self.channels)
    }

    /// ITU-R BT.601 luma. A luma strip is returned unchanged.
    pub fn to_luma(&self) -> Strip {
        if self.channels == 1 {
            return self.clone();
        }
        let samples = self
            .samples
            .chunks_exact(3)
            .map(|px| (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]).clamp(0.0, 1.0))
            .collect();
        Strip {
            width: self.width,
            height: self.height,
            channels: 1,
            samples,
        }
    }

    fn at(&self, x: u32, y: u32) -> f64 {
        self.samples[(y * self.width + x) as usize]
    }
}

fn same_shape(a: &Strip, b: &Strip) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

fn require_channels(s: &Strip, n: u8) -> Result<(), MetricError> {
    if s.channels != n {
        return Err(MetricError::ChannelCount {
            expected: n,
            got: s.channels,
        });
    }
    Ok(())
}

/// Raw mean SSIM in `[-1, 1]` over every fully contained uniform window
/// (7×7, or the whole strip along any axis shorter than 7).
pub fn ssim_raw(a: &Strip, b: &Strip) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    require_channels(a, 1)?;
    let wx = SSIM_WINDOW.min(a.width);
    let wy = SSIM_WINDOW.min(a.height);
    let n = f64::from(wx * wy);

    let mut total = 0.0;
    let mut windows = 0u32;
    for oy in 0..=(a.height - wy) {
        for ox in 0..=(a.width - wx) {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in oy..oy + wy {
                for x in ox..ox + wx {
                    sa += a.at(x, y);
                    sb += b.at(x, y);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in oy..oy + wy {
                for x in ox..ox + wx {
                    let da = a.at(x, y) - ma;
                    let db = b.at(x, y) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / f64::from(windows))
}

/// SSIM mapped into `[0, 1]` via `(s + 1) / 2`.
pub fn ssim(a: &Strip, b: &Strip) -> Result<f64, MetricError> {
    Ok(((ssim_raw(a, b)? + 1.0) / 2.0).clamp(0.0, 1.0))
}

/// Central-difference gradient magnitude; one-sided at the borders and zero
/// along an axis of length 1.
pub fn gradient_magnitude(s: &Strip) -> Vec<f64> {
    let (w, h) = (s.width, s.height);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let gx = if w == 1 {
                0.0
            } else if x == 0 {
                s.at(1, y) - s.at(0, y)
            } else if x == w - 1 {
                s.at(x, y) - s.at(x - 1, y)
            } else {
                (s.at(x + 1, y) - s.at(x - 1, y)) / 2.0
            };
            let gy = if h == 1 {
                0.0
            } else if y == 0 {
                s.at(x, 1) - s.at(x, 0)
            } else if y == h - 1 {
                s.at(x, y) - s.at(x, y - 1)
            } else {
                (s.at(x, y + 1) - s.at(x, y - 1)) / 2.0
            };
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Standard deviations below this count as flat, so rounding noise in an
/// otherwise constant signal does not produce an arbitrary correlation.
const FLAT_STD: f64 = 1e-12;

/// Zero-mean normalized cross-correlation of two equally long signals, or
/// `None` when either is flat.
pub fn zero_mean_ncc(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    let floor = n * FLAT_STD * FLAT_STD;
    if saa <= floor || sbb <= floor {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Gradient-magnitude NCC mapped into `[0, 1]`. Identical strips score 1
/// even when flat; otherwise a flat gradient field scores 0.5.
pub fn gradient_ncc(a: &Strip, b: &Strip) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    require_channels(a, 1)?;
    if a.samples == b.samples {
        return Ok(1.0);
    }
    let (ga, gb) = (gradient_magnitude(a), gradient_magnitude(b));
    Ok(match zero_mean_ncc(&ga, &gb) {
        Some(ncc) => (ncc + 1.0) / 2.0,
        None => 0.5,
    })
}

/// RGB in `[0, 1]` to (hue in degrees `[0, 360)`, saturation, value).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h.rem_euclid(360.0), s, v)
}

/// Unit-sum 16×8×8 HSV histogram of an RGB strip.
pub fn hsv_histogram(s: &Strip) -> Result<Vec<f64>, MetricError> {
    require_channels(s, 3)?;
    let bin = |v: f64, n: usize| ((v * n as f64) as usize).min(n - 1);
    let mut hist = vec![0.0; HUE_BINS * SAT_BINS * VAL_BINS];
    for px in s.samples.chunks_exact(3) {
        let (h, sat, val) = rgb_to_hsv(px[0], px[1], px[2]);
        let k = (bin(h / 360.0, HUE_BINS) * SAT_BINS + bin(sat, SAT_BINS)) * VAL_BINS
            + bin(val, VAL_BINS);
        hist[k] += 1.0;
    }
    let total = (s.samples.len() / 3) as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    Ok(hist)
}

/// Symmetric chi-squared distance `Σ (p - q)² / (p + q + ε)`.
pub fn chi2_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a - b;
            d * d / (a + b + CHI2_EPS)
        })
        .sum()
}

/// `1 / (1 + χ²)` between HSV histograms of two RGB strips.
pub fn hsv_chi2_similarity(a: &Strip, b: &Strip) -> Result<f64, MetricError> {
    same_shape(a, b)?;
    let chi2 = chi2_distance(&hsv_histogram(a)?, &hsv_histogram(b)?);
    Ok(1.0 / (1.0 + chi2))
}

/// Per-component breakdown of [`composite_similarity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityParts {
    pub structure: f64,
    pub edges: f64,
    pub color: f64,
}

impl SimilarityParts {
    pub fn mean(&self) -> f64 {
        ((self.structure + self.edges + self.color) / 3.0).clamp(0.0, 1.0)
    }
}

pub fn similarity_parts(a: &Strip, b: &Strip) -> Result<SimilarityParts, MetricError> {
    same_shape(a, b)?;
    require_channels(a, 3)?;
    let (la, lb) = (a.to_luma(), b.to_luma());
    Ok(SimilarityParts {
        structure: ssim(&la, &lb)?,
        edges: gradient_ncc(&la, &lb)?,
        color: hsv_chi2_similarity(a, b)?,
    })
}

/// Mean of the structural, edge and colour similarities of two RGB strips.
pub fn composite_similarity(a: &Strip, b: &Strip) -> Result<f64, MetricError> {
    Ok(similarity_parts(a, b)?.mean())
}
