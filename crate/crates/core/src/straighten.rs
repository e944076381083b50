//! Curved planar reformation of the spine.
//!
//! A centerline polyline is smoothed, re-sampled at uniform arc length and
//! framed with rotation-minimizing frames. The volume is then resampled on
//! the planes normal to the curve so that the curve becomes the straight line
//! `i = j = 0`; the `i = 0` plane of that grid is the new mid-sagittal image.
//!
//! Frame convention: `t` is the unit tangent (towards increasing z), `u` the
//! left-right in-plane axis and `v = t x u` the anterior-posterior axis, so
//! `(u, v, t)` is right-handed. Output voxel `(i, j, k)` samples
//! `c(s_k) + i * delta * u(s_k) + j * delta * v(s_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CoordFrame, Point2, Point3};
use crate::interp::{linear, SmoothingSpline};
use crate::localization::CenterlinePolyline;
use crate::volume::{Volume3D, VolumeGeometry};

// Sub-intervals per knot interval in the arc-length table.
const ARC_SUBDIVISIONS: usize = 8;

/// Five-point Gauss-Legendre nodes and weights on [-1, 1].
const GAUSS_LEGENDRE: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// One arc-length sample of the framed centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    pub s: f64,
    pub position: Point3,
    pub tangent: Point3,
    pub u: Point3,
    pub v: Point3,
}

/// Arc-length parameterized centerline with an orthonormal frame per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpineCurve {
    samples: Vec<CurveSample>,
    step: f64,
}

impl SpineCurve {
    pub fn samples(&self) -> &[CurveSample] {
        &self.samples
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Arc length between first and last sample.
    pub fn length(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.s - a.s,
            _ => 0.0,
        }
    }

    /// Extends both ends straight along the end tangents by about `margin` mm,
    /// keeping the end frames. Arc length restarts at zero.
    pub fn extended(&self, margin: f64) -> SpineCurve {
        let n = (margin.max(0.0) / self.step).round() as usize;
        if n == 0 || self.samples.is_empty() {
            return self.clone();
        }
        let first = self.samples[0];
        let last = self.samples[self.samples.len() - 1];
        let mut out = Vec::with_capacity(self.samples.len() + 2 * n);
        for m in (1..=n).rev() {
            let d = m as f64 * self.step;
            out.push(CurveSample {
                position: first.position - d * first.tangent,
                ..first
            });
        }
        out.extend_from_slice(&self.samples);
        for m in 1..=n {
            let d = m as f64 * self.step;
            out.push(CurveSample {
                position: last.position + d * last.tangent,
                ..last
            });
        }
        for (k, sample) in out.iter_mut().enumerate() {
            sample.s = k as f64 * self.step;
        }
        SpineCurve {
            samples: out,
            step: self.step,
        }
    }
}

/// Smooths `x(z)`, `y(z)`, resamples by arc length every `step` mm, estimates
/// tangents by central differences and transports frames along the curve.
pub fn build_spine_curve(polyline: &CenterlinePolyline, step: f64, smoothing: f64) -> Result<SpineCurve> {
    if polyline.frame() != CoordFrame::World {
        return Err(Error::invalid("spine curve needs a world-frame polyline"));
    }
    if polyline.len() < 4 {
        return Err(Error::degenerate(format!(
            "spine curve needs at least 4 points, got {}",
            polyline.len()
        )));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("arc-length step must be positive"));
    }
    let pts = polyline.points();
    let zs: Vec<f64> = pts.iter().map(|p| p.z).collect();
    let sx = SmoothingSpline::fit(&zs, &pts.iter().map(|p| p.x).collect::<Vec<_>>(), smoothing)?;
    let sy = SmoothingSpline::fit(&zs, &pts.iter().map(|p| p.y).collect::<Vec<_>>(), smoothing)?;
    let at = |z: f64| Point3::new(sx.eval(z), sy.eval(z), z);
    let speed = |z: f64| {
        let (dx, dy) = (sx.derivative(z), sy.derivative(z));
        (1.0 + dx * dx + dy * dy).sqrt()
    };
    let arc = |z0: f64, z1: f64| {
        let (mid, half) = (0.5 * (z0 + z1), 0.5 * (z1 - z0));
        half * GAUSS_LEGENDRE
            .iter()
            .map(|(x, w)| w * speed(mid + half * x))
            .sum::<f64>()
    };

    // Arc-length table s(z).
    let mut table_z = Vec::with_capacity((zs.len() - 1) * ARC_SUBDIVISIONS + 1);
    let mut table_s = Vec::with_capacity(table_z.capacity());
    table_z.push(zs[0]);
    table_s.push(0.0);
    for w in zs.windows(2) {
        for m in 1..=ARC_SUBDIVISIONS {
            let z0 = *table_z.last().unwrap();
            let z = w[0] + (w[1] - w[0]) * m as f64 / ARC_SUBDIVISIONS as f64;
            table_s.push(table_s.last().unwrap() + arc(z0, z));
            table_z.push(z);
        }
    }
    let total = *table_s.last().unwrap();
    let count = (total / step + 1e-9).floor() as usize + 1;
    if !(total > 0.0) || count < 3 {
        return Err(Error::degenerate(format!(
            "centerline of length {total} mm is too short for step {step} mm"
        )));
    }

    // Invert s(z): table interpolation refined by Newton steps.
    let z_at = |s: f64| {
        let i = table_s.partition_point(|&t| t <= s).clamp(1, table_s.len() - 1) - 1;
        let mut z = linear(&table_s, &table_z, s);
        for _ in 0..3 {
            let f = table_s[i] + arc(table_z[i], z) - s;
            z = (z - f / speed(z)).clamp(table_z[i], table_z[i + 1]);
        }
        z
    };
    let positions: Vec<Point3> = (0..count).map(|k| at(z_at(k as f64 * step))).collect();
    let tangents = central_tangents(&positions)?;
    let frames = rotation_minimizing_frames(&positions, &tangents)?;

    let samples = positions
        .iter()
        .zip(tangents)
        .zip(frames)
        .enumerate()
        .map(|(k, ((&position, tangent), (u, v)))| CurveSample {
            s: k as f64 * step,
            position,
            tangent,
            u,
            v,
        })
        .collect();
    Ok(SpineCurve { samples, step })
}

/// Unit tangents: central differences inside, second-order one-sided at the ends.
fn central_tangents(positions: &[Point3]) -> Result<Vec<Point3>> {
    let n = positions.len();
    (0..n)
        .map(|k| {
            let d = if k == 0 {
                -3.0 * positions[0] + 4.0 * positions[1] - positions[2]
            } else if k == n - 1 {
                3.0 * positions[n - 1] - 4.0 * positions[n - 2] + positions[n - 3]
            } else {
                positions[k + 1] - positions[k - 1]
            };
            d.try_normalize(1e-12)
                .ok_or_else(|| Error::degenerate(format!("zero tangent at sample {k}")))
        })
        .collect()
}

fn orthonormalize(u: Point3, t: &Point3) -> Option<Point3> {
    (u - u.dot(t) * t).try_normalize(1e-9)
}

/// Double-reflection rotation-minimizing frames seeded with the left-right axis.
fn rotation_minimizing_frames(positions: &[Point3], tangents: &[Point3]) -> Result<Vec<(Point3, Point3)>> {
    let t0 = tangents[0];
    let u0 = orthonormalize(Point3::x(), &t0)
        .or_else(|| orthonormalize(Point3::y(), &t0))
        .ok_or_else(|| Error::degenerate("cannot seed frame"))?;
    let mut frames = Vec::with_capacity(positions.len());
    frames.push((u0, t0.cross(&u0)));
    let mut u = u0;
    for k in 0..positions.len() - 1 {
        let (ti, tn) = (tangents[k], tangents[k + 1]);
        let v1 = positions[k + 1] - positions[k];
        let c1 = v1.dot(&v1);
        let (ul, tl) = if c1 > 0.0 {
            (
                u - (2.0 / c1) * v1.dot(&u) * v1,
                ti - (2.0 / c1) * v1.dot(&ti) * v1,
            )
        } else {
            (u, ti)
        };
        let v2 = tn - tl;
        let c2 = v2.dot(&v2);
        let next = if c2 > 1e-30 {
            ul - (2.0 / c2) * v2.dot(&ul) * v2
        } else {
            ul
        };
        u = orthonormalize(next, &tn)
            .ok_or_else(|| Error::degenerate(format!("frame collapsed at sample {}", k + 1)))?;
        frames.push((u, tn.cross(&u)));
    }
    Ok(frames)
}

/// Sampling map from straightened grid indices back to world space.
#[derive(Debug, Clone, PartialEq)]
pub struct StraightenTransform {
    delta: f64,
    lateral_half: usize,
    ap_half: usize,
    rows: Vec<CurveSample>,
}

impl StraightenTransform {
    pub fn new(delta: f64, lateral_half: usize, ap_half: usize, rows: Vec<CurveSample>) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("straightened spacing must be positive"));
        }
        if rows.len() < 2 {
            return Err(Error::invalid("transform needs at least two rows"));
        }
        Ok(Self {
            delta,
            lateral_half,
            ap_half,
            rows,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of voxels on each side of the curve along `u`.
    pub fn lateral_half(&self) -> usize {
        self.lateral_half
    }

    /// Number of voxels on each side of the curve along `v`.
    pub fn ap_half(&self) -> usize {
        self.ap_half
    }

    pub fn rows(&self) -> &[CurveSample] {
        &self.rows
    }

    /// Straightened volume shape `(lateral, anterior-posterior, arc length)`.
    pub fn volume_shape(&self) -> [usize; 3] {
        [2 * self.lateral_half + 1, 2 * self.ap_half + 1, self.rows.len()]
    }

    /// Mid-sagittal image shape `(columns, rows)`.
    pub fn image_shape(&self) -> (usize, usize) {
        (2 * self.ap_half + 1, self.rows.len())
    }

    fn row_interp(&self, y: f64) -> (Point3, Point3, Point3, Point3) {
        let last = self.rows.len() - 1;
        let k = (y.floor().max(0.0) as usize).min(last - 1);
        let f = y - k as f64;
        let (a, b) = (&self.rows[k], &self.rows[k + 1]);
        let lerp = |p: Point3, q: Point3| p + f * (q - p);
        (
            lerp(a.position, b.position),
            lerp(a.tangent, b.tangent),
            lerp(a.u, b.u),
            lerp(a.v, b.v),
        )
    }

    /// World position of a mid-sagittal image point. `p.x` is the
    /// anterior-posterior column, `p.y` the arc-length row; the grid map is
    /// interpolated bilinearly between samples.
    pub fn to_world(&self, p: Point2) -> Result<Point3> {
        let (w, h) = self.image_shape();
        let eps = 1e-9;
        if !p.is_finite() || p.x < -eps || p.x > (w - 1) as f64 + eps || p.y < -eps || p.y > (h - 1) as f64 + eps {
            return Err(Error::OutOfBounds(format!(
                "({}, {}) outside {w} x {h} image",
                p.x, p.y
            )));
        }
        let (c, _, _, v) = self.row_interp(p.y.clamp(0.0, (h - 1) as f64));
        Ok(c + (p.x - self.ap_half as f64) * self.delta * v)
    }

    /// Projects a world point onto the mid-sagittal image: finds the normal
    /// plane containing it, then its anterior-posterior coordinate. Returns the
    /// image point and the dropped left-right offset in mm.
    pub fn to_image(&self, p: Point3) -> Result<(Point2, f64)> {
        let d: Vec<f64> = self
            .rows
            .iter()
            .map(|r| (p - r.position).dot(&r.tangent))
            .collect();
        let mut best: Option<(f64, Point2, f64)> = None;
        for k in 0..self.rows.len() - 1 {
            let (d0, d1) = (d[k], d[k + 1]);
            if !(d0 >= 0.0 && d1 <= 0.0) || d0 == d1 {
                continue;
            }
            let f = d0 / (d0 - d1);
            let y = k as f64 + f;
            let (c, _, u, v) = self.row_interp(y);
            let r = p - c;
            let x = self.ap_half as f64 + r.dot(&v) / (self.delta * v.norm_squared());
            let lateral = r.dot(&u.normalize());
            let dist = r.norm();
            if best.as_ref().is_none_or(|(bd, _, _)| dist < *bd) {
                best = Some((dist, Point2::new(x, y), lateral));
            }
        }
        let (w, _) = self.image_shape();
        match best {
            Some((_, q, lateral)) if q.x >= 0.0 && q.x <= (w - 1) as f64 => Ok((q, lateral)),
            _ => Err(Error::OutOfBounds(format!(
                "world point ({:.3}, {:.3}, {:.3}) does not project into the straightened image",
                p.x, p.y, p.z
            ))),
        }
    }
}

/// Resamples `vol` on the planes normal to `curve`. The curve step must equal `delta`.
pub fn straighten_volume(
    vol: &Volume3D,
    curve: &SpineCurve,
    delta: f64,
    half_extent: [f64; 2],
    fill: f32,
) -> Result<(Volume3D, StraightenTransform)> {
    if (curve.step() - delta).abs() > 1e-9 * delta {
        return Err(Error::invalid(format!(
            "curve step {} differs from straightened spacing {delta}",
            curve.step()
        )));
    }
    if half_extent.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
        return Err(Error::invalid("half extent must be non-negative"));
    }
    let half = half_extent.map(|h| (h / delta + 1e-9).floor() as usize);
    let transform = StraightenTransform::new(delta, half[0], half[1], curve.samples().to_vec())?;
    let s0 = curve.samples()[0].s;
    let geometry = VolumeGeometry::new(
        transform.volume_shape(),
        [delta; 3],
        [-(half[0] as f64) * delta, -(half[1] as f64) * delta, s0],
    )?;
    let rows = transform.rows();
    let out = Volume3D::from_fn(geometry, |i, j, k| {
        let r = &rows[k];
        let a = (i as f64 - half[0] as f64) * delta;
        let b = (j as f64 - half[1] as f64) * delta;
        vol.trilinear_sample(r.position + a * r.u + b * r.v, fill) as f32
    });
    Ok((out, transform))
}

/// The 2D mid-sagittal image and the transform back to world space.
#[derive(Debug, Clone, PartialEq)]
pub struct StraightenedImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
    transform: StraightenTransform,
}

impl StraightenedImage {
    pub fn new(values: Vec<f32>, transform: StraightenTransform) -> Result<Self> {
        let (width, height) = transform.image_shape();
        if values.len() != width * height {
            return Err(Error::shape(format!(
                "image {width} x {height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            transform,
        })
    }

    /// Image stored as a one-slice volume `(columns, rows, 1)`.
    pub fn from_volume(vol: &Volume3D, transform: StraightenTransform) -> Result<Self> {
        let (w, h) = transform.image_shape();
        if vol.shape() != [w, h, 1] {
            return Err(Error::shape(format!(
                "sagittal image {:?} does not match transform {:?}",
                vol.shape(),
                [w, h, 1]
            )));
        }
        Self::new(vol.data().to_vec(), transform)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f32 {
        self.values[col + self.width * row]
    }

    pub fn transform(&self) -> &StraightenTransform {
        &self.transform
    }

    pub fn to_world(&self, p: Point2) -> Result<Point3> {
        self.transform.to_world(p)
    }

    pub fn to_volume(&self) -> Volume3D {
        let d = self.transform.delta;
        let geometry = VolumeGeometry {
            shape: [self.width, self.height, 1],
            spacing: [d; 3],
            origin: [-(self.transform.ap_half as f64) * d, self.transform.rows[0].s, 0.0],
        };
        Volume3D::new(geometry, self.values.clone()).expect("shape checked at construction")
    }
}

/// The `i = 0` plane of a straightened volume.
pub fn mid_sagittal_slice(straightened: &Volume3D, transform: &StraightenTransform) -> Result<StraightenedImage> {
    mid_sagittal_slab(straightened, transform, 0)
}

/// Mean of the planes `|i| <= half_width` around the mid-sagittal plane.
/// `half_width = 0` is the single-plane extraction.
pub fn mid_sagittal_slab(
    straightened: &Volume3D,
    transform: &StraightenTransform,
    half_width: usize,
) -> Result<StraightenedImage> {
    let shape = transform.volume_shape();
    if straightened.shape() != shape {
        return Err(Error::shape(format!(
            "straightened volume {:?} does not match transform {:?}",
            straightened.shape(),
            shape
        )));
    }
    let center = transform.lateral_half;
    let hw = half_width.min(center);
    let (w, h) = transform.image_shape();
    let mut values = Vec::with_capacity(w * h);
    for k in 0..h {
        for j in 0..w {
            let sum: f64 = (center - hw..=center + hw)
                .map(|i| straightened.get(i, j, k) as f64)
                .sum();
            values.push((sum / (2 * hw + 1) as f64) as f32);
        }
    }
    StraightenedImage::new(values, transform.clone())
}

#[derive(Serialize, Deserialize)]
struct RowRecord {
    s: f64,
    c: [f64; 3],
    t: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
}

/// Serializable form of [`StraightenTransform`].
#[derive(Serialize, Deserialize)]
pub struct TransformRecord {
    delta: f64,
    lateral_half: usize,
    ap_half: usize,
    rows: Vec<RowRecord>,
}

impl From<&StraightenTransform> for TransformRecord {
    fn from(t: &StraightenTransform) -> Self {
        let arr = |p: Point3| [p.x, p.y, p.z];
        Self {
            delta: t.delta,
            lateral_half: t.lateral_half,
            ap_half: t.ap_half,
            rows: t
                .rows
                .iter()
                .map(|r| RowRecord {
                    s: r.s,
                    c: arr(r.position),
                    t: arr(r.tangent),
                    u: arr(r.u),
                    v: arr(r.v),
                })
                .collect(),
        }
    }
}

impl TryFrom<TransformRecord> for StraightenTransform {
    type Error = Error;

    fn try_from(rec: TransformRecord) -> Result<Self> {
        let p = |a: [f64; 3]| Point3::new(a[0], a[1], a[2]);
        let rows = rec
            .rows
            .into_iter()
            .map(|r| CurveSample {
                s: r.s,
                position: p(r.c),
                tangent: p(r.t),
                u: p(r.u),
                v: p(r.v),
            })
            .collect();
        StraightenTransform::new(rec.delta, rec.lateral_half, rec.ap_half, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(points: Vec<Point3>) -> CenterlinePolyline {
        CenterlinePolyline::new(CoordFrame::World, points).unwrap()
    }

    fn assert_orthonormal(curve: &SpineCurve) {
        for s in curve.samples() {
            let (t, u, v) = (s.tangent, s.u, s.v);
            for (a, b) in [(t, u), (t, v), (u, v)] {
                assert!(a.dot(&b).abs() < 1e-9);
            }
            for a in [t, u, v] {
                assert!((a.norm() - 1.0).abs() < 1e-9);
            }
            assert!((t.cross(&u) - v).norm() < 1e-9);
        }
    }

    #[test]
    fn vertical_line_has_axis_frames() {
        let c = build_spine_curve(&world((0..20).map(|k| Point3::new(3.0, -2.0, k as f64)).collect()), 1.0, 10.0).unwrap();
        assert_eq!(c.len(), 20);
        for s in c.samples() {
            assert!((s.tangent - Point3::z()).norm() < 1e-12);
            assert!((s.u - Point3::x()).norm() < 1e-12);
            assert!((s.v - Point3::y()).norm() < 1e-12);
        }
        assert_orthonormal(&c);
    }

    #[test]
    fn oblique_line_constant_frames() {
        let dir = Point3::new(0.3, -0.2, 1.0);
        let pts: Vec<Point3> = (0..30).map(|k| Point3::new(1.0, 2.0, 0.0) + k as f64 * 0.8 * dir).collect();
        let expected_len = (pts[29] - pts[0]).norm();
        let c = build_spine_curve(&world(pts.clone()), 0.5, 10.0).unwrap();
        let t = dir.normalize();
        // Left-right axis rotated into the normal plane.
        let u = (Point3::x() - Point3::x().dot(&t) * t).normalize();
        for s in c.samples() {
            assert!((s.tangent - t).norm() < 1e-9);
            assert!((s.u - u).norm() < 1e-9);
            assert!((s.v - t.cross(&u)).norm() < 1e-9);
        }
        let last = c.samples().last().unwrap();
        assert!(expected_len - last.s < 0.5 && expected_len >= last.s);
        assert!(((last.position - pts[0]).norm() - last.s).abs() < 1e-9);
        assert_orthonormal(&c);
    }

    #[test]
    fn rejects_short_or_bad_polylines() {
        let pts = world((0..3).map(|k| Point3::new(0.0, 0.0, k as f64)).collect());
        assert!(matches!(build_spine_curve(&pts, 1.0, 0.0), Err(Error::Degenerate(_))));
        let tiny = world((0..5).map(|k| Point3::new(0.0, 0.0, k as f64 * 1e-3)).collect());
        assert!(matches!(build_spine_curve(&tiny, 1.0, 0.0), Err(Error::Degenerate(_))));
        let vox = CenterlinePolyline::new(CoordFrame::Voxel, (0..5).map(|k| Point3::new(0.0, 0.0, k as f64)).collect()).unwrap();
        assert!(build_spine_curve(&vox, 1.0, 0.0).is_err());
    }

    fn arc_polyline(radius: f64, dz: f64, half_angle: f64) -> CenterlinePolyline {
        // Circle in the x-z plane centered at (radius, 0, 0) passing through the origin.
        let zmax = radius * half_angle.sin();
        let n = (2.0 * zmax / dz).floor() as usize;
        world(
            (0..=n)
                .map(|k| {
                    let z = -zmax + k as f64 * dz;
                    Point3::new(radius - (radius * radius - z * z).sqrt(), 0.0, z)
                })
                .collect(),
        )
    }

    fn circle_tangent(radius: f64, p: Point3) -> Point3 {
        let radial = (p - Point3::new(radius, 0.0, 0.0)).normalize();
        // Rotate the outward radial direction a quarter turn in the x-z plane
        // towards increasing z.
        let t = Point3::new(radial.z, 0.0, -radial.x);
        if t.z < 0.0 { -t } else { t }
    }

    #[test]
    fn circular_arc_tangents_and_torsion_free_frames() {
        let r = 100.0;
        let c = build_spine_curve(&arc_polyline(r, 0.5, 0.5), 1.0, 0.0).unwrap();
        for s in c.samples() {
            assert!((s.tangent - circle_tangent(r, s.position)).norm() < 1e-3);
            // Plane normal stays the anterior-posterior axis.
            assert!((s.v - Point3::y()).norm() < 1e-6);
            assert!(s.u.y.abs() < 1e-6);
        }
        assert_orthonormal(&c);
    }

    #[test]
    fn circular_arc_interior_with_default_smoothing() {
        let r = 100.0;
        let c = build_spine_curve(&arc_polyline(r, 1.0, 0.5), 1.0, 10.0).unwrap();
        let n = c.len();
        for s in &c.samples()[10..n - 10] {
            assert!((s.tangent - circle_tangent(r, s.position)).norm() < 1e-3);
        }
    }

    #[test]
    fn sagittal_plane_curve_keeps_left_right_axis() {
        // Kyphosis-like bend in the y-z plane: u must remain the x axis.
        let pts = world((0..80).map(|k| {
            let z = k as f64 * 2.0;
            Point3::new(0.0, 20.0 * (z / 60.0).sin(), z)
        }).collect());
        let c = build_spine_curve(&pts, 1.0, 10.0).unwrap();
        for s in c.samples() {
            assert!((s.u - Point3::x()).norm() < 1e-6);
        }
        assert_orthonormal(&c);
    }

    #[test]
    fn chord_never_exceeds_arc() {
        let pts = world((0..60).map(|k| {
            let z = k as f64 * 3.0;
            Point3::new(25.0 * (z / 40.0).sin(), 10.0 * (z / 70.0).cos(), z)
        }).collect());
        let c = build_spine_curve(&pts, 1.0, 10.0).unwrap();
        for w in c.samples().windows(2) {
            assert!(w[1].s > w[0].s);
            assert!((w[1].position - w[0].position).norm() <= w[1].s - w[0].s + 1e-6);
        }
        assert_orthonormal(&c);
    }

    fn test_volume() -> Volume3D {
        let g = VolumeGeometry::new([21, 23, 30], [1.0; 3], [-10.0, -11.0, 0.0]).unwrap();
        Volume3D::from_fn(g, |i, j, k| ((i * 7 + j * 13 + k * 29) % 97) as f32 - 40.0)
    }

    fn vertical_curve(n: usize) -> SpineCurve {
        build_spine_curve(&world((0..n).map(|k| Point3::new(0.0, 0.0, k as f64)).collect()), 1.0, 10.0).unwrap()
    }

    #[test]
    fn identity_straightening() {
        let vol = test_volume();
        let curve = vertical_curve(30);
        let (out, tr) = straighten_volume(&vol, &curve, 1.0, [5.0, 6.0], -1024.0).unwrap();
        assert_eq!(out.shape(), [11, 13, 30]);
        for k in 0..30 {
            for j in 0..13 {
                for i in 0..11 {
                    let expected = vol.get(i + 5, j + 5, k);
                    assert!((out.get(i, j, k) - expected).abs() <= 1e-5);
                }
            }
        }
        let img = mid_sagittal_slice(&out, &tr).unwrap();
        for k in 0..30 {
            for j in 0..13 {
                assert!((img.get(j, k) - vol.get(10, j + 5, k)).abs() <= 1e-5);
            }
        }
        // Curve column traces the centerline intensities.
        for k in 0..30 {
            assert!((img.get(6, k) as f64 - vol.trilinear_sample(curve.samples()[k].position, 0.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_volume_straightens_to_constant() {
        let g = VolumeGeometry::new([40, 40, 60], [1.0; 3], [-20.0, -20.0, -10.0]).unwrap();
        let vol = Volume3D::filled(g, 7.0);
        let pts = world((0..35).map(|k| Point3::new(4.0 * (k as f64 / 10.0).sin(), 0.0, k as f64)).collect());
        let curve = build_spine_curve(&pts, 1.0, 10.0).unwrap();
        let (out, _) = straighten_volume(&vol, &curve, 1.0, [5.0, 5.0], -1024.0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 7.0).abs() < 1e-5));
    }

    #[test]
    fn step_mismatch_rejected() {
        let vol = test_volume();
        assert!(straighten_volume(&vol, &vertical_curve(10), 0.5, [2.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn to_world_on_curve_and_bounds() {
        let pts = world((0..50).map(|k| Point3::new(10.0 * (k as f64 / 15.0).sin(), 0.0, k as f64)).collect());
        let curve = build_spine_curve(&pts, 1.0, 10.0).unwrap();
        let tr = StraightenTransform::new(1.0, 3, 4, curve.samples().to_vec()).unwrap();
        for (k, s) in curve.samples().iter().enumerate() {
            assert_eq!(tr.to_world(Point2::new(4.0, k as f64)).unwrap(), s.position);
        }
        assert!(tr.to_world(Point2::new(-0.5, 0.0)).is_err());
        assert!(tr.to_world(Point2::new(0.0, curve.len() as f64)).is_err());
        // Column offsets follow v.
        let s = curve.samples()[7];
        assert!((tr.to_world(Point2::new(6.0, 7.0)).unwrap() - (s.position + 2.0 * s.v)).norm() < 1e-12);
    }

    #[test]
    fn image_round_trip_within_delta() {
        let pts = world((0..80).map(|k| Point3::new(20.0 * (k as f64 / 30.0).sin(), 0.0, k as f64)).collect());
        let curve = build_spine_curve(&pts, 1.0, 10.0).unwrap();
        let tr = StraightenTransform::new(1.0, 10, 20, curve.samples().to_vec()).unwrap();
        for (x, y, lateral_mm) in [(13.0, 40.0, 0.0), (4.25, 33.6, 1.5), (27.5, 52.2, -3.0), (20.0, 61.9, 0.4)] {
            let q = Point2::new(x, y);
            let k = y.floor() as usize;
            let p = tr.to_world(q).unwrap() + lateral_mm * curve.samples()[k].u;
            let (back, lateral) = tr.to_image(p).unwrap();
            assert!(back.distance(&q) < 0.05, "{q:?} -> {back:?}");
            assert!((lateral - lateral_mm).abs() < 0.05);
            let nearest = Point2::new(back.x.round(), back.y.round());
            assert!((tr.to_world(nearest).unwrap() - p).norm() <= 1.0 + lateral_mm.abs());
        }
    }

    #[test]
    fn arc_length_distances_bound_world_distances() {
        let pts = world((0..60).map(|k| Point3::new(15.0 * (k as f64 / 20.0).sin(), 0.0, k as f64)).collect());
        let curve = build_spine_curve(&pts, 1.0, 10.0).unwrap();
        let tr = StraightenTransform::new(1.0, 0, 0, curve.samples().to_vec()).unwrap();
        for (a, b) in [(0.0, 10.0), (3.5, 40.25), (12.0, 13.0)] {
            let d = (tr.to_world(Point2::new(0.0, a)).unwrap() - tr.to_world(Point2::new(0.0, b)).unwrap()).norm();
            assert!(d <= (b - a) + 1e-6);
        }
        let straight = vertical_curve(20);
        let tr = StraightenTransform::new(1.0, 0, 0, straight.samples().to_vec()).unwrap();
        let d = (tr.to_world(Point2::new(0.0, 2.5)).unwrap() - tr.to_world(Point2::new(0.0, 17.0)).unwrap()).norm();
        assert!((d - 14.5).abs() < 1e-9);
    }

    #[test]
    fn extension_is_straight_and_uniform() {
        let c = vertical_curve(10).extended(3.0);
        assert_eq!(c.len(), 16);
        assert_eq!(c.samples()[0].position, Point3::new(0.0, 0.0, -3.0));
        assert_eq!(c.samples()[15].position, Point3::new(0.0, 0.0, 12.0));
        for (k, s) in c.samples().iter().enumerate() {
            assert_eq!(s.s, k as f64);
        }
    }

    #[test]
    fn transform_record_round_trip() {
        let c = vertical_curve(6);
        let tr = StraightenTransform::new(1.0, 2, 3, c.samples().to_vec()).unwrap();
        let json = serde_json::to_string(&TransformRecord::from(&tr)).unwrap();
        let back: StraightenTransform = serde_json::from_str::<TransformRecord>(&json).unwrap().try_into().unwrap();
        assert_eq!(back, tr);
    }
}
