//! Owned RGB rasters with samples in `[0, 1]`.

use crate::metrics::{MetricError, Strip};
use crate::model::CellRect;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Raster {
    /// Interleaved RGB samples in row-major order.
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, MetricError> {
        // Reuse the strip checks for size and range.
        let strip = Strip::rgb(width, height, data)?;
        Ok(Self {
            width,
            height,
            data: strip.samples().to_vec(),
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Result<Self, MetricError> {
        let data = (0..width as usize * height as usize)
            .flat_map(|_| rgb)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copy out a sub-rectangle. Panics if `rect` leaves the raster.
    pub fn crop(&self, rect: CellRect) -> Raster {
        assert!(
            rect.x1 <= self.width
                && rect.y1 <= self.height
                && rect.x0 < rect.x1
                && rect.y0 < rect.y1
        );
        let mut data = Vec::with_capacity(rect.area() * 3);
        for y in rect.y0..rect.y1 {
            let start = 3 * (y as usize * self.width as usize + rect.x0 as usize);
            let end = start + 3 * rect.width() as usize;
            data.extend_from_slice(&self.data[start..end]);
        }
        Raster {
            width: rect.width(),
            height: rect.height(),
            data,
        }
    }

    pub fn to_strip(&self) -> Strip {
        Strip::rgb(self.width, self.height, self.data.clone())
            .expect("raster invariants match strip invariants")
    }

    /// True when every pixel inside `rect` has the same colour.
    pub fn is_uniform(&self, rect: CellRect) -> bool {
        let first = self.pixel(rect.x0, rect.y0);
        (rect.y0..rect.y1).all(|y| (rect.x0..rect.x1).all(|x| self.pixel(x, y) == first))
    }
}
