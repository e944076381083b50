//! Synthetic spines with planted vertebral heights, and the oracle network
//! outputs derived from their annotations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::{assign_targets, AnchorGrid, GroundTruth, Predictions, ENCODED_LEN};
use crate::error::{Error, Result};
use crate::genant::{genant_index, Grade, GradeThresholds, VertebraKeypoints};
use crate::geometry::Point3;
use crate::io::Annotation;
use crate::localization::{CenterlineTarget, SliceProbMap};
use crate::volume::{Volume3D, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyShape {
    Box,
    Ellipsoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub n_vertebrae: usize,
    /// Center-to-center distance along the centerline, mm.
    pub pitch_mm: f64,
    /// Left-right extent of each body, mm.
    pub body_width_mm: f64,
    /// Anterior-posterior extent of each body, mm.
    pub body_depth_mm: f64,
    pub body_shape: BodyShape,
    /// Lateral sinusoidal displacement of the centerline, mm.
    pub scoliosis_amplitude_mm: f64,
    pub scoliosis_wavelength_mm: f64,
    /// Planted anterior, middle and posterior heights, mm; sampled when absent.
    pub heights_mm: Option<Vec<[f64; 3]>>,
    /// Range of the unfractured height when heights are sampled, mm.
    pub base_height_mm: [f64; 2],
    pub body_intensity: f32,
    pub background_intensity: f32,
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [128, 128, 256],
            spacing: [1.0, 1.0, 1.5],
            n_vertebrae: 12,
            pitch_mm: 28.0,
            body_width_mm: 40.0,
            body_depth_mm: 32.0,
            body_shape: BodyShape::Box,
            scoliosis_amplitude_mm: 15.0,
            scoliosis_wavelength_mm: 500.0,
            heights_mm: None,
            base_height_mm: [19.0, 23.0],
            body_intensity: 400.0,
            background_intensity: -1000.0,
            noise_sigma: 10.0,
            seed: 0,
        }
    }
}

/// A generated phantom with its exact annotations.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume3D,
    pub vertebrae: Vec<PhantomVertebra>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomVertebra {
    pub center: Point3,
    /// Unit centerline tangent at the center.
    pub tangent: Point3,
    pub heights: [f64; 3],
    pub genant: f64,
    pub keypoints: VertebraKeypoints,
}

impl Phantom {
    pub fn annotations(&self) -> Vec<Annotation> {
        self.vertebrae
            .iter()
            .enumerate()
            .map(|(i, v)| Annotation {
                label: Some(format!("V{}", i + 1)),
                keypoints: v.keypoints,
            })
            .collect()
    }

    pub fn keypoints(&self) -> Vec<VertebraKeypoints> {
        self.vertebrae.iter().map(|v| v.keypoints).collect()
    }
}

// G bands kept clear of the default grade cuts.
fn sample_genant(grade: Grade, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = match grade {
        Grade::Normal => (0.86, 1.0),
        Grade::Mild => (0.75, 0.79),
        Grade::Moderate => (0.62, 0.72),
        Grade::Severe => (0.40, 0.55),
    };
    rng.random_range(lo..=hi)
}

fn sample_heights(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = cfg.n_vertebrae;
    let mut grades: Vec<Grade> = [Grade::Normal, Grade::Mild, Grade::Moderate, Grade::Severe]
        .into_iter()
        .take(n)
        .collect();
    while grades.len() < n {
        let r: f64 = rng.random();
        grades.push(if r < 0.70 {
            Grade::Normal
        } else if r < 0.80 {
            Grade::Mild
        } else if r < 0.92 {
            Grade::Moderate
        } else {
            Grade::Severe
        });
    }
    grades.shuffle(rng);
    let [h_lo, h_hi] = cfg.base_height_mm;
    grades
        .into_iter()
        .map(|grade| {
            let base = rng.random_range(h_lo..=h_hi);
            let g = sample_genant(grade, rng);
            let low = g * base;
            let third = rng.random_range(low..=base);
            // Which height collapses: anterior (wedge), middle (biconcave) or posterior (crush).
            let mut h = match rng.random_range(0..3) {
                0 => [low, third, base],
                1 => [base, low, third],
                _ => [third, base, low],
            };
            if grade == Grade::Normal && rng.random_bool(0.5) {
                h.reverse();
            }
            h
        })
        .collect()
}

/// Centerline `x(z) = x_c + A sin(2 pi (z - z_mid) / wavelength)`, `y = y_c`.
struct Centerline {
    x_c: f64,
    y_c: f64,
    z_mid: f64,
    amplitude: f64,
    wavenumber: f64,
}

impl Centerline {
    fn at(&self, z: f64) -> Point3 {
        Point3::new(
            self.x_c + self.amplitude * (self.wavenumber * (z - self.z_mid)).sin(),
            self.y_c,
            z,
        )
    }

    fn tangent(&self, z: f64) -> Point3 {
        let dx = self.amplitude * self.wavenumber * (self.wavenumber * (z - self.z_mid)).cos();
        Point3::new(dx, 0.0, 1.0).normalize()
    }

    fn speed(&self, z: f64) -> f64 {
        let dx = self.amplitude * self.wavenumber * (self.wavenumber * (z - self.z_mid)).cos();
        (1.0 + dx * dx).sqrt()
    }

    /// Arc length from `z_mid` to `z` (signed), Simpson's rule on a fine grid.
    fn arc(&self, z: f64) -> f64 {
        let n = ((z - self.z_mid).abs() / 0.05).ceil().max(2.0) as usize * 2;
        let h = (z - self.z_mid) / n as f64;
        let mut sum = self.speed(self.z_mid) + self.speed(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * self.speed(self.z_mid + i as f64 * h);
        }
        sum * h / 3.0
    }

    /// `z` at signed arc length `s` from `z_mid`, by bisection.
    fn z_at(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (self.z_mid - s.abs() - 1.0, self.z_mid + s.abs() + 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.arc(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

struct Body {
    center: Point3,
    tangent: Point3,
    lateral: Point3,
    heights: [f64; 3],
    lo: Point3,
    hi: Point3,
}

impl Body {
    /// Local height at anterior-posterior offset `a` (negative is anterior).
    fn height_at(&self, a: f64, depth: f64) -> f64 {
        let half = 0.5 * depth;
        let [ha, hm, hp] = self.heights;
        if a <= 0.0 {
            hm + (ha - hm) * (-a / half)
        } else {
            hm + (hp - hm) * (a / half)
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_vertebrae < 2 {
            return Err(Error::invalid("a phantom needs at least two vertebrae"));
        }
        if self.shape.iter().any(|&n| n < 2) {
            return Err(Error::invalid("phantom volume needs at least two voxels per axis"));
        }
        let positive = [
            ("pitch", self.pitch_mm),
            ("body width", self.body_width_mm),
            ("body depth", self.body_depth_mm),
            ("scoliosis wavelength", self.scoliosis_wavelength_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("spacing must be positive"));
        }
        if !(self.scoliosis_amplitude_mm >= 0.0 && self.scoliosis_amplitude_mm.is_finite()) {
            return Err(Error::invalid("scoliosis amplitude must be non-negative"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        let [lo, hi] = self.base_height_mm;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("base height range must be positive and ordered"));
        }
        if let Some(h) = &self.heights_mm {
            if h.len() != self.n_vertebrae {
                return Err(Error::invalid(format!(
                    "{} planted height triples for {} vertebrae",
                    h.len(),
                    self.n_vertebrae
                )));
            }
            if h.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid("planted heights must be positive"));
            }
        }
        Ok(())
    }
}

/// Builds the phantom volume and its annotations. Bodies are centered on the
/// centerline every `pitch_mm` of arc length, tilted to follow its tangent,
/// with height varying linearly from the anterior edge through the middle to
/// the posterior edge. Anterior is `-y`.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let heights = match &cfg.heights_mm {
        Some(h) => h.clone(),
        None => sample_heights(cfg, &mut rng),
    };
    let geometry = VolumeGeometry::new(cfg.shape, cfg.spacing, [0.0; 3])?;
    let extent = geometry.extent();
    let line = Centerline {
        x_c: 0.5 * extent[0],
        y_c: 0.5 * extent[1],
        z_mid: 0.5 * extent[2],
        amplitude: cfg.scoliosis_amplitude_mm,
        wavenumber: 2.0 * std::f64::consts::PI / cfg.scoliosis_wavelength_mm,
    };

    let n = cfg.n_vertebrae;
    let (w2, d2) = (0.5 * cfg.body_width_mm, 0.5 * cfg.body_depth_mm);
    let mut bodies = Vec::with_capacity(n);
    for (i, h) in heights.iter().enumerate() {
        let s = (i as f64 - 0.5 * (n - 1) as f64) * cfg.pitch_mm;
        let z = line.z_at(s);
        let center = line.at(z);
        let tangent = line.tangent(z);
        let lateral = Point3::new(tangent.z, 0.0, -tangent.x);
        let hmax = h.iter().copied().fold(0.0, f64::max);
        let reach = Point3::new(
            w2 * lateral.x.abs() + 0.5 * hmax * tangent.x.abs(),
            d2,
            w2 * lateral.z.abs() + 0.5 * hmax * tangent.z.abs(),
        );
        bodies.push(Body {
            center,
            tangent,
            lateral,
            heights: *h,
            lo: center - reach,
            hi: center + reach,
        });
    }

    for pair in bodies.windows(2) {
        let tilt = pair[0].tangent.angle(&pair[1].tangent);
        let max_h = |b: &Body| b.heights.iter().copied().fold(0.0, f64::max);
        if 0.5 * (max_h(&pair[0]) + max_h(&pair[1])) + w2 * tilt.sin() >= cfg.pitch_mm {
            return Err(Error::invalid(format!(
                "vertebral bodies overlap: heights up to {:.1} mm exceed the {} mm pitch",
                max_h(&pair[0]).max(max_h(&pair[1])),
                cfg.pitch_mm
            )));
        }
    }
    let first = bodies.first().expect("n >= 2");
    let last = bodies.last().expect("n >= 2");
    let lo = bodies.iter().fold(first.lo, |acc, b| acc.inf(&b.lo));
    let hi = bodies.iter().fold(last.hi, |acc, b| acc.sup(&b.hi));
    if (0..3).any(|a| lo[a] < 0.0 || hi[a] > extent[a]) {
        return Err(Error::invalid(format!(
            "spine spans [{:.1}, {:.1}] x [{:.1}, {:.1}] x [{:.1}, {:.1}] mm, outside the {:?} mm volume",
            lo.x, hi.x, lo.y, hi.y, lo.z, hi.z, extent
        )));
    }

    let (body, background) = (cfg.body_intensity, cfg.background_intensity);
    let ellipsoid = cfg.body_shape == BodyShape::Ellipsoid;
    let depth = cfg.body_depth_mm;
    let mut volume = Volume3D::from_fn(geometry, |i, j, k| {
        let p = geometry.world(Point3::new(i as f64, j as f64, k as f64));
        for b in &bodies {
            if (0..3).any(|a| p[a] < b.lo[a] || p[a] > b.hi[a]) {
                continue;
            }
            let r = p - b.center;
            let (l, a, t) = (r.dot(&b.lateral), r.y, r.dot(&b.tangent));
            let inside_section = if ellipsoid {
                (l / w2).powi(2) + (a / d2).powi(2) <= 1.0
            } else {
                l.abs() <= w2 && a.abs() <= d2
            };
            if inside_section && t.abs() <= 0.5 * b.height_at(a, depth) {
                return body;
            }
        }
        background
    });
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in volume.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }

    let vertebrae = bodies
        .iter()
        .map(|b| {
            let v = Point3::y();
            let mut points = [Point3::zeros(); 6];
            for (n, a) in [-d2, 0.0, d2].into_iter().enumerate() {
                let half = 0.5 * b.heights[n];
                points[2 * n] = b.center + a * v + half * b.tangent;
                points[2 * n + 1] = b.center + a * v - half * b.tangent;
            }
            let [ha, hm, hp] = b.heights;
            Ok(PhantomVertebra {
                center: b.center,
                tangent: b.tangent,
                heights: b.heights,
                genant: genant_index(ha, hm, hp)?,
                keypoints: VertebraKeypoints::new(points)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Phantom { volume, vertebrae })
}

/// Per-slice oracle maps on `grid`. Slices outside the annotated span are
/// uniform and marked invalid.
#[derive(Debug, Clone)]
pub struct HeatmapStack {
    pub geometry: VolumeGeometry,
    pub maps: Vec<SliceProbMap>,
    pub valid: Vec<bool>,
}

impl HeatmapStack {
    /// Valid slices as stored values; invalid slices are written as zeros.
    pub fn to_volume(&self) -> Volume3D {
        let [nx, ny, _] = self.geometry.shape;
        let mut vol = Volume3D::filled(self.geometry, 0.0);
        for (k, (m, &ok)) in self.maps.iter().zip(&self.valid).enumerate() {
            if !ok {
                continue;
            }
            let dst = &mut vol.data_mut()[k * nx * ny..(k + 1) * nx * ny];
            for (d, v) in dst.iter_mut().zip(m.values()) {
                *d = *v as f32;
            }
        }
        vol
    }

    pub fn valid_maps(&self) -> Vec<SliceProbMap> {
        self.maps
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(m, _)| m.clone())
            .collect()
    }
}

/// Isotropic Gaussians (`sigma_voxels` in grid voxels) centered on the
/// interpolated centerline target, normalized to unit sum per slice.
pub fn oracle_heatmaps(
    annotations: &[VertebraKeypoints],
    grid: &VolumeGeometry,
    sigma_voxels: f64,
) -> Result<HeatmapStack> {
    if !(sigma_voxels > 0.0) {
        return Err(Error::invalid("heatmap sigma must be positive"));
    }
    let target = CenterlineTarget::new(annotations)?;
    let [nx, ny, nz] = grid.shape;
    let mut maps = Vec::with_capacity(nz);
    let mut valid = Vec::with_capacity(nz);
    for k in 0..nz {
        let z = grid.slice_z(k);
        if !target.contains(z) {
            maps.push(SliceProbMap::new(k, nx, ny, vec![1.0 / (nx * ny) as f64; nx * ny])?);
            valid.push(false);
            continue;
        }
        let c = grid.voxel(target.at(z));
        if c.x < 0.0 || c.y < 0.0 || c.x > (nx - 1) as f64 || c.y > (ny - 1) as f64 {
            return Err(Error::OutOfBounds(format!("centerline leaves slice {k}")));
        }
        let inv = 1.0 / (2.0 * sigma_voxels * sigma_voxels);
        let gx: Vec<f64> = (0..nx).map(|i| (-(i as f64 - c.x).powi(2) * inv).exp()).collect();
        let gy: Vec<f64> = (0..ny).map(|j| (-(j as f64 - c.y).powi(2) * inv).exp()).collect();
        let mut values = Vec::with_capacity(nx * ny);
        for y in &gy {
            for x in &gx {
                values.push(x * y);
            }
        }
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NoMass);
        }
        values.iter_mut().for_each(|v| *v /= total);
        maps.push(SliceProbMap::new(k, nx, ny, values)?);
        valid.push(true);
    }
    Ok(HeatmapStack {
        geometry: *grid,
        maps,
        valid,
    })
}

/// Objectness and regression maps equal to the assigned targets.
pub fn oracle_predictions(gt: &[GroundTruth], anchors: &AnchorGrid, positive_iou: f64) -> Result<Predictions> {
    let targets = assign_targets(anchors, gt, positive_iou)?;
    let objectness = targets.objectness().iter().map(|&o| f64::from(o)).collect();
    let mut regression = vec![0.0; anchors.len() * ENCODED_LEN];
    for p in targets.positives() {
        regression[p.anchor * ENCODED_LEN..(p.anchor + 1) * ENCODED_LEN].copy_from_slice(&p.encoded.0);
    }
    Predictions::new(objectness, regression)
}

/// Adds Gaussian keypoint noise of `sigma_mm` to the regression of every
/// anchor with objectness at least `score_threshold`.
pub fn perturb_regression(
    pred: &mut Predictions,
    anchors: &AnchorGrid,
    sigma_mm: f64,
    score_threshold: f64,
    seed: u64,
) -> Result<()> {
    if pred.n_anchors() != anchors.len() {
        return Err(Error::shape("predictions do not match the anchor grid"));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_px = sigma_mm / anchors.pixel_spacing();
    for idx in 0..pred.n_anchors() {
        if pred.objectness[idx] < score_threshold {
            continue;
        }
        let b = anchors.anchor(idx);
        for c in 0..ENCODED_LEN {
            let size = if c % 2 == 0 { b.width() } else { b.height() };
            pred.regression[idx * ENCODED_LEN + c] += sigma_px / size * normal.sample(&mut rng);
        }
    }
    Ok(())
}

/// Grades the planted vertebrae with `cuts`.
pub fn planted_grades(phantom: &Phantom, cuts: &GradeThresholds) -> Vec<Grade> {
    phantom
        .vertebrae
        .iter()
        .map(|v| crate::genant::grade(v.genant, cuts))
        .collect()
}
