//! Planar points, axis-aligned boxes and box overlap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 3D point or displacement. World points are in mm.
pub type Point3 = nalgebra::Vector3<f64>;

/// Distinguishes world (mm) coordinates from continuous voxel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordFrame {
    World,
    Voxel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// The six height keypoints of one vertebra in a 2D image, ordered
/// anterior-superior, anterior-inferior, middle-superior, middle-inferior,
/// posterior-superior, posterior-inferior.
pub type Keypoints2D = [Point2; 6];

/// Axis-aligned box given by center and extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    center: Point2,
    width: f64,
    height: f64,
}

impl Box2D {
    pub fn new(center: Point2, width: f64, height: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::invalid("box center must be finite"));
        }
        if !(width > 0.0 && width.is_finite() && height > 0.0 && height.is_finite()) {
            return Err(Error::invalid(format!(
                "box extent must be positive, got {width} x {height}"
            )));
        }
        Ok(Self {
            center,
            width,
            height,
        })
    }

    pub fn center(&self) -> Point2 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn min_x(&self) -> f64 {
        self.center.x - 0.5 * self.width
    }

    pub fn max_x(&self) -> f64 {
        self.center.x + 0.5 * self.width
    }

    pub fn min_y(&self) -> f64 {
        self.center.y - 0.5 * self.height
    }

    pub fn max_y(&self) -> f64 {
        self.center.y + 0.5 * self.height
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let ix = (a.max_x().min(b.max_x()) - a.min_x().max(b.min_x())).max(0.0);
    let iy = (a.max_y().min(b.max_y()) - a.min_y().max(b.min_y())).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Tight axis-aligned box around a vertebra's six keypoints.
pub fn bbox_from_keypoints(points: &Keypoints2D) -> Result<Box2D> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("keypoints must be finite"));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::degenerate(format!(
            "keypoints span a zero-extent box ({w} x {h})"
        )));
    }
    Box2D::new(Point2::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)), w, h)
}
