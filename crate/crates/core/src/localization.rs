//! Centerline decoding from per-slice probability maps, and the annotation-derived
//! centerline target it is trained against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genant::{kp, VertebraKeypoints};
use crate::geometry::{CoordFrame, Point2, Point3};
use crate::interp::{linear, MonotoneCubic};
use crate::volume::{Volume3D, VolumeGeometry};

/// Per-axial-slice map over an `nx * ny` grid, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceProbMap {
    pub slice: usize,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl SliceProbMap {
    pub fn new(slice: usize, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || values.len() != nx * ny {
            return Err(Error::shape(format!(
                "slice map {nx} x {ny} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("slice map values must be finite"));
        }
        Ok(Self {
            slice,
            nx,
            ny,
            values,
        })
    }

    /// Axial slice `k` of a volume.
    pub fn from_volume(vol: &Volume3D, k: usize) -> Result<Self> {
        let [nx, ny, _] = vol.shape();
        Self::new(
            k,
            nx,
            ny,
            vol.axial_slice(k).iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// How map values are turned into soft-argmax weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SoftArgmaxMode {
    /// Weights are the map values normalized to unit sum.
    Probabilities,
    /// Weights are `softmax(temperature * value)`.
    Logits { temperature: f64 },
}

impl Default for SoftArgmaxMode {
    fn default() -> Self {
        SoftArgmaxMode::Probabilities
    }
}

/// Expected grid coordinate `(x, y)` under the normalized map weights.
pub fn soft_argmax_2d(map: &SliceProbMap, mode: SoftArgmaxMode) -> Result<Point2> {
    let weights: Vec<f64> = match mode {
        SoftArgmaxMode::Probabilities => {
            if map.values.iter().any(|&v| v < 0.0) {
                return Err(Error::invalid("probability map has negative entries"));
            }
            let total = map.total_mass();
            if !(total > 0.0) {
                return Err(Error::NoMass);
            }
            map.values.iter().map(|v| v / total).collect()
        }
        SoftArgmaxMode::Logits { temperature } => {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(Error::invalid("soft-argmax temperature must be positive"));
            }
            let peak = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = map
                .values
                .iter()
                .map(|v| (temperature * (v - peak)).exp())
                .collect();
            let total: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / total).collect()
        }
    };

    // Marginals keep the sums short and the result inside the grid hull.
    let mut mx = vec![0.0; map.nx];
    let mut my = vec![0.0; map.ny];
    for j in 0..map.ny {
        for i in 0..map.nx {
            let w = weights[i + map.nx * j];
            mx[i] += w;
            my[j] += w;
        }
    }
    let ex: f64 = mx.iter().enumerate().map(|(i, w)| i as f64 * w).sum();
    let ey: f64 = my.iter().enumerate().map(|(j, w)| j as f64 * w).sum();
    Ok(Point2::new(
        ex.clamp(0.0, (map.nx - 1) as f64),
        ey.clamp(0.0, (map.ny - 1) as f64),
    ))
}

/// Ordered centerline with one point per axial slice.
///
/// In the voxel frame `x, y` are continuous voxel indices and `z` is the slice
/// index; in the world frame all three are mm.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlinePolyline {
    frame: CoordFrame,
    points: Vec<Point3>,
}

impl CenterlinePolyline {
    pub fn new(frame: CoordFrame, points: Vec<Point3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("centerline points must be finite"));
        }
        if points.windows(2).any(|w| !(w[1].z > w[0].z)) {
            return Err(Error::invalid("centerline z must be strictly increasing"));
        }
        Ok(Self { frame, points })
    }

    pub fn frame(&self) -> CoordFrame {
        self.frame
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_world(&self, geometry: &VolumeGeometry) -> Self {
        match self.frame {
            CoordFrame::World => self.clone(),
            CoordFrame::Voxel => Self {
                frame: CoordFrame::World,
                points: self.points.iter().map(|p| geometry.world(*p)).collect(),
            },
        }
    }

    pub fn to_voxel(&self, geometry: &VolumeGeometry) -> Self {
        match self.frame {
            CoordFrame::Voxel => self.clone(),
            CoordFrame::World => Self {
                frame: CoordFrame::Voxel,
                points: self.points.iter().map(|p| geometry.voxel(*p)).collect(),
            },
        }
    }
}

/// Soft-argmax on every slice, assembled in slice order (voxel frame).
pub fn slicewise_centerline(maps: &[SliceProbMap], mode: SoftArgmaxMode) -> Result<CenterlinePolyline> {
    let points = maps
        .iter()
        .map(|m| {
            soft_argmax_2d(m, mode)
                .map(|p| Point3::new(p.x, p.y, m.slice as f64))
                .map_err(|e| Error::Slice {
                    slice: m.slice,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    CenterlinePolyline::new(CoordFrame::Voxel, points)
}

/// Decodes a probability-map volume. Leading and trailing slices without mass
/// are outside the spine and skipped; an empty slice in between is an error.
pub fn centerline_from_volume(maps: &Volume3D, mode: SoftArgmaxMode) -> Result<CenterlinePolyline> {
    let nz = maps.shape()[2];
    let has_mass = |k: usize| maps.axial_slice(k).iter().any(|&v| v > 0.0);
    let first = (0..nz).find(|&k| has_mass(k));
    let last = (0..nz).rev().find(|&k| has_mass(k));
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::NoMass);
    };
    let slices = (first..=last)
        .map(|k| SliceProbMap::from_volume(maps, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(slicewise_centerline(&slices, mode)?.to_world(maps.geometry()))
}

/// Collected middle-height endpoints, sorted by z, with duplicate z merged.
fn middle_endpoints(annotations: &[VertebraKeypoints]) -> Vec<Point3> {
    let mut pts: Vec<Point3> = annotations
        .iter()
        .flat_map(|v| [v.points[kp::MIDDLE_SUPERIOR], v.points[kp::MIDDLE_INFERIOR]])
        .collect();
    pts.sort_by(|a, b| a.z.total_cmp(&b.z));
    let mut merged: Vec<(Point3, usize)> = Vec::with_capacity(pts.len());
    for p in pts {
        match merged.last_mut() {
            Some((acc, n)) if (acc.z / *n as f64 - p.z).abs() < 1e-9 => {
                *acc += p;
                *n += 1;
            }
            _ => merged.push((p, 1)),
        }
    }
    merged.into_iter().map(|(p, n)| p / n as f64).collect()
}

/// `x(z)`, `y(z)` interpolants through the middle-height endpoints.
#[derive(Debug, Clone)]
pub struct CenterlineTarget {
    x: MonotoneCubic,
    y: MonotoneCubic,
    z_range: (f64, f64),
}

impl CenterlineTarget {
    pub fn new(annotations: &[VertebraKeypoints]) -> Result<Self> {
        let pts = middle_endpoints(annotations);
        if pts.len() < 2 {
            return Err(Error::invalid(
                "centerline target needs middle endpoints at two distinct heights",
            ));
        }
        let zs: Vec<f64> = pts.iter().map(|p| p.z).collect();
        let x = MonotoneCubic::new(zs.clone(), pts.iter().map(|p| p.x).collect())?;
        let y = MonotoneCubic::new(zs.clone(), pts.iter().map(|p| p.y).collect())?;
        Ok(Self {
            x,
            y,
            z_range: (zs[0], zs[zs.len() - 1]),
        })
    }

    pub fn z_range(&self) -> (f64, f64) {
        self.z_range
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.z_range.0 - 1e-9 && z <= self.z_range.1 + 1e-9
    }

    pub fn at(&self, z: f64) -> Point3 {
        Point3::new(self.x.eval(z), self.y.eval(z), z)
    }
}

/// Interpolated centerline at every slice of `grid` within the annotated span
/// (world frame).
pub fn centerline_target(
    annotations: &[VertebraKeypoints],
    grid: &VolumeGeometry,
) -> Result<CenterlinePolyline> {
    let target = CenterlineTarget::new(annotations)?;
    let points: Vec<Point3> = (0..grid.shape[2])
        .map(|k| grid.slice_z(k))
        .filter(|&z| target.contains(z))
        .map(|z| target.at(z))
        .collect();
    if points.is_empty() {
        return Err(Error::invalid("no slice lies within the annotated span"));
    }
    CenterlinePolyline::new(CoordFrame::World, points)
}

/// Mean over slices of the mean absolute x/y deviation, in mm.
pub fn centerline_mae(pred: &CenterlinePolyline, target: &CenterlinePolyline) -> Result<f64> {
    if pred.frame != CoordFrame::World || target.frame != CoordFrame::World {
        return Err(Error::invalid("centerline MAE needs world-frame polylines"));
    }
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "slice ranges differ: {} vs {} points",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in pred.points.iter().zip(&target.points) {
        if (a.z - b.z).abs() > 1e-6 {
            return Err(Error::shape(format!("slice z {} vs {}", a.z, b.z)));
        }
        total += 0.5 * ((a.x - b.x).abs() + (a.y - b.y).abs());
    }
    Ok(total / pred.len() as f64)
}

/// Linear interpolation of a world-frame curve onto the slices
/// `z0 + k * dz` that fall within its z range.
pub fn upsample_curve(curve: &CenterlinePolyline, z0: f64, dz: f64) -> Result<CenterlinePolyline> {
    if curve.frame != CoordFrame::World {
        return Err(Error::invalid("upsampling needs a world-frame curve"));
    }
    if curve.len() < 2 {
        return Err(Error::invalid("upsampling needs at least two slices"));
    }
    if !(dz > 0.0) {
        return Err(Error::invalid("fine spacing must be positive"));
    }
    let zs: Vec<f64> = curve.points.iter().map(|p| p.z).collect();
    let xs: Vec<f64> = curve.points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.y).collect();
    let (lo, hi) = (zs[0], zs[zs.len() - 1]);
    let k0 = ((lo - z0) / dz - 1e-9).ceil() as i64;
    let k1 = ((hi - z0) / dz + 1e-9).floor() as i64;
    let points = (k0..=k1)
        .map(|k| {
            let z = (z0 + k as f64 * dz).clamp(lo, hi);
            Point3::new(linear(&zs, &xs, z), linear(&zs, &ys, z), z0 + k as f64 * dz)
        })
        .collect();
    CenterlinePolyline::new(CoordFrame::World, points)
}
