use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box2D, Point2};

/// Anchor scales (mm, square root of the box area) and ratios (height / width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub scales_mm: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            scales_mm: vec![17.0, 23.0, 28.0, 35.0],
            ratios: vec![0.8, 1.1, 1.3, 2.0],
        }
    }
}

/// Anchors at every pixel center of an image, one per (scale, ratio) pair.
///
/// Anchor `index = (row * width + col) * per_position + scale_idx * n_ratios + ratio_idx`.
/// Boxes are in pixel units, centered at `(col, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    width: usize,
    height: usize,
    pixel_spacing: f64,
    config: AnchorConfig,
    sizes_px: Vec<(f64, f64)>,
}

impl AnchorGrid {
    /// `w = scale / sqrt(ratio)`, `h = scale * sqrt(ratio)`, converted to pixels.
    pub fn new(width: usize, height: usize, pixel_spacing: f64, config: &AnchorConfig) -> Result<Self> {
        if !(pixel_spacing > 0.0 && pixel_spacing.is_finite()) {
            return Err(Error::invalid("pixel spacing must be positive"));
        }
        if config.scales_mm.is_empty() || config.ratios.is_empty() {
            return Err(Error::invalid("anchor scales and ratios must be non-empty"));
        }
        if config.scales_mm.iter().chain(&config.ratios).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("anchor scales and ratios must be positive"));
        }
        let mut sizes_px = Vec::with_capacity(config.scales_mm.len() * config.ratios.len());
        for &s in &config.scales_mm {
            for &r in &config.ratios {
                let root = r.sqrt();
                sizes_px.push((s / root / pixel_spacing, s * root / pixel_spacing));
            }
        }
        Ok(Self {
            width,
            height,
            pixel_spacing,
            config: config.clone(),
            sizes_px,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }

    pub fn config(&self) -> &AnchorConfig {
        &self.config
    }

    /// Anchors per pixel position.
    pub fn per_position(&self) -> usize {
        self.sizes_px.len()
    }

    /// Anchor `(width, height)` in pixels for each per-position slot.
    pub fn sizes_px(&self) -> &[(f64, f64)] {
        &self.sizes_px
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.per_position()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize, slot: usize) -> usize {
        (row * self.width + col) * self.per_position() + slot
    }

    /// `(col, row, slot)` of an anchor index.
    #[inline]
    pub fn position(&self, index: usize) -> (usize, usize, usize) {
        let a = self.per_position();
        let pixel = index / a;
        (pixel % self.width, pixel / self.width, index % a)
    }

    pub fn anchor(&self, index: usize) -> Box2D {
        let (col, row, slot) = self.position(index);
        let (w, h) = self.sizes_px[slot];
        Box2D::new(Point2::new(col as f64, row as f64), w, h).expect("anchor sizes validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(scale: f64, ratio: f64) -> AnchorGrid {
        AnchorGrid::new(1, 1, 1.0, &AnchorConfig { scales_mm: vec![scale], ratios: vec![ratio] }).unwrap()
    }

    #[test]
    fn unit_ratio_is_square() {
        let b = single(20.0, 1.0).anchor(0);
        assert_eq!((b.width(), b.height()), (20.0, 20.0));
    }

    #[test]
    fn ratio_four() {
        let b = single(20.0, 4.0).anchor(0);
        assert!((b.width() - 10.0).abs() < 1e-12 && (b.height() - 40.0).abs() < 1e-12);
    }

    #[test]
    fn counting_and_indexing() {
        let g = AnchorGrid::new(10, 10, 1.0, &AnchorConfig::default()).unwrap();
        assert_eq!(g.per_position(), 16);
        assert_eq!(g.len(), 1600);
        for idx in [0, 17, 999, 1599] {
            let (c, r, s) = g.position(idx);
            assert_eq!(g.index(c, r, s), idx);
        }
        let b = g.anchor(g.index(3, 7, 0));
        assert_eq!(b.center(), Point2::new(3.0, 7.0));
    }

    #[test]
    fn spacing_converts_mm_to_pixels() {
        let g = AnchorGrid::new(2, 2, 0.5, &AnchorConfig { scales_mm: vec![10.0], ratios: vec![1.0] }).unwrap();
        assert_eq!(g.anchor(0).width(), 20.0);
        assert!(AnchorGrid::new(2, 2, 0.0, &AnchorConfig::default()).is_err());
    }
}
