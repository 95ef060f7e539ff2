//! Jigsaw: score how well each candidate piece continues the source image
//! along its left and top edges.

use super::CompileError;
use crate::metrics::composite_similarity;
use crate::model::{
    normalize_box, CellRect, ImageDims, ImageRef, Item, Location, Modality, PerceptionProgram,
    ReadOut,
};
use crate::raster::Raster;

pub const JIGSAW_IDS: [&str; 4] = ["left_A", "top_A", "left_B", "top_B"];

/// Which source band a candidate edge strip is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StripAnchor {
    /// The band just outside the missing region: left of it for the left
    /// edge, above it for the top edge.
    Outside,
    /// The band just inside the region's own left and top borders. Only
    /// meaningful when the source still carries the region's pixels.
    Inside,
    /// `Outside` when the region is a flat fill (masked), `Inside` otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JigsawInstance {
    pub source: Raster,
    /// Missing region in source pixels, half-open.
    pub region: CellRect,
    /// Candidates A and B, in that order.
    pub candidates: [Raster; 2],
    /// `None` picks [`default_strip_width`].
    pub strip_width: Option<u32>,
    pub anchor: StripAnchor,
}

/// `max(4, 10%)` of the shorter candidate edge, capped at that edge.
pub fn default_strip_width(width: u32, height: u32) -> u32 {
    let short = width.min(height);
    (short / 10).max(4).min(short)
}

fn region_dims(r: &CellRect) -> (u32, u32) {
    (r.width(), r.height())
}

/// Four items `left_A, top_A, left_B, top_B`, each located by its edge strip
/// in the candidate's own normalized frame and scored by the composite strip
/// similarity against the matching source band.
pub fn compile_jigsaw(ji: &JigsawInstance) -> Result<PerceptionProgram, CompileError> {
    let region = ji.region;
    if region.x0 >= region.x1
        || region.y0 >= region.y1
        || region.x1 > ji.source.width()
        || region.y1 > ji.source.height()
    {
        return Err(CompileError::RegionOutOfBounds((
            region.x0, region.y0, region.x1, region.y1,
        )));
    }
    let (w, h) = region_dims(&region);
    for cand in &ji.candidates {
        if (cand.width(), cand.height()) != (w, h) {
            return Err(CompileError::DimsMismatch {
                expected: (w, h),
                got: (cand.width(), cand.height()),
            });
        }
    }
    let s = ji.strip_width.unwrap_or_else(|| default_strip_width(w, h));
    if s == 0 || s > w.min(h) {
        return Err(CompileError::StripTooWide {
            width: s,
            limit: w.min(h),
        });
    }

    let anchor = match ji.anchor {
        StripAnchor::Auto if ji.source.is_uniform(region) => StripAnchor::Outside,
        StripAnchor::Auto => StripAnchor::Inside,
        other => other,
    };
    let (src_left, src_top) = match anchor {
        StripAnchor::Outside => {
            if region.x0 < s || region.y0 < s {
                return Err(CompileError::StripTooWide {
                    width: s,
                    limit: region.x0.min(region.y0),
                });
            }
            (
                CellRect {
                    x0: region.x0 - s,
                    y0: region.y0,
                    x1: region.x0,
                    y1: region.y1,
                },
                CellRect {
                    x0: region.x0,
                    y0: region.y0 - s,
                    x1: region.x1,
                    y1: region.y0,
                },
            )
        }
        _ => (
            CellRect {
                x0: region.x0,
                y0: region.y0,
                x1: region.x0 + s,
                y1: region.y1,
            },
            CellRect {
                x0: region.x0,
                y0: region.y0,
                x1: region.x1,
                y1: region.y0 + s,
            },
        ),
    };
    let src_left = ji.source.crop(src_left).to_strip();
    let src_top = ji.source.crop(src_top).to_strip();
    let cand_left = CellRect {
        x0: 0,
        y0: 0,
        x1: s,
        y1: h,
    };
    let cand_top = CellRect {
        x0: 0,
        y0: 0,
        x1: w,
        y1: s,
    };

    let cand_dims = ImageDims::new(w, h)?;
    let mut pp = PerceptionProgram::new(
        Modality::Jigsaw,
        vec![
            ImageRef::new(
                "img0",
                ImageDims::new(ji.source.width(), ji.source.height())?,
            ),
            ImageRef::new("img1", cand_dims),
            ImageRef::new("img2", cand_dims),
        ],
    );
    let mut ids = JIGSAW_IDS.iter();
    for cand in &ji.candidates {
        for (edge, reference) in [(cand_left, &src_left), (cand_top, &src_top)] {
            let strip = cand.crop(edge).to_strip();
            let score = composite_similarity(reference, &strip)?;
            let loc = normalize_box(
                f64::from(edge.x0),
                f64::from(edge.y0),
                f64::from(edge.x1 - 1),
                f64::from(edge.y1 - 1),
                cand_dims,
            )?;
            let id = ids.next().expect("two edges per candidate");
            pp.items.push(Item::new(
                *id,
                Location::Box(loc),
                Some(ReadOut::Score(score)),
            ));
        }
    }
    Ok(pp)
}
