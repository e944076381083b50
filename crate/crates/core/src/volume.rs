//! Voxel rasters with anisotropic spacing, trilinear sampling and resampling.
//!
//! Axis convention: x is left-right, y is anterior-posterior and z is the
//! cranio-caudal (axial stack) axis. Voxel indices address voxel centers, so
//! `world(v) = origin + v * spacing` component-wise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Intensity used for samples outside the voxel lattice (air).
pub const DEFAULT_FILL: f32 = -1024.0;

// Slack on the lattice hull test, in voxels.
const HULL_EPS: f64 = 1e-9;

/// Shape, spacing and origin of a voxel raster, without the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl VolumeGeometry {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::invalid(format!("volume shape {shape:?} has an empty axis")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("spacing {spacing:?} must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("origin must be finite"));
        }
        Ok(Self {
            shape,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear offset of voxel `(i, j, k)`, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.shape[0] * (j + self.shape[1] * k)
    }

    /// World position of a (possibly fractional) voxel index.
    #[inline]
    pub fn world(&self, v: Point3) -> Point3 {
        Point3::new(
            self.origin[0] + v.x * self.spacing[0],
            self.origin[1] + v.y * self.spacing[1],
            self.origin[2] + v.z * self.spacing[2],
        )
    }

    /// Continuous voxel index of a world position.
    #[inline]
    pub fn voxel(&self, p: Point3) -> Point3 {
        Point3::new(
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        )
    }

    /// World z of axial slice `k`.
    pub fn slice_z(&self, k: usize) -> f64 {
        self.origin[2] + k as f64 * self.spacing[2]
    }

    /// World-space extent covered by voxel centers along each axis.
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.shape[a] - 1) as f64 * self.spacing[a])
    }
}

/// Scalar voxel raster. Intensities are stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geometry: VolumeGeometry,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(geometry: VolumeGeometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::shape(format!(
                "volume {:?} needs {} values, got {}",
                geometry.shape,
                geometry.len(),
                data.len()
            )));
        }
        Ok(Self { geometry, data })
    }

    pub fn filled(geometry: VolumeGeometry, value: f32) -> Self {
        Self {
            data: vec![value; geometry.len()],
            geometry,
        }
    }

    /// Builds a volume by evaluating `f` at every voxel index, slices in parallel.
    pub fn from_fn<F>(geometry: VolumeGeometry, f: F) -> Self
    where
        F: Fn(usize, usize, usize) -> f32 + Sync,
    {
        let [nx, ny, _] = geometry.shape;
        let mut data = vec![0f32; geometry.len()];
        data.par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(k, slab)| {
                for j in 0..ny {
                    for i in 0..nx {
                        slab[i + nx * j] = f(i, j, k);
                    }
                }
            });
        Self { geometry, data }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.geometry.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f32) {
        let idx = self.geometry.index(i, j, k);
        self.data[idx] = value;
    }

    /// The `nx * ny` values of axial slice `k`.
    pub fn axial_slice(&self, k: usize) -> &[f32] {
        let n = self.geometry.shape[0] * self.geometry.shape[1];
        &self.data[k * n..(k + 1) * n]
    }

    /// Trilinear interpolation at a world position; `fill` outside the lattice hull.
    #[inline]
    pub fn trilinear_sample(&self, p: Point3, fill: f32) -> f64 {
        self.sample_voxel(self.geometry.voxel(p), fill)
    }

    /// Trilinear interpolation at a continuous voxel index.
    pub fn sample_voxel(&self, v: Point3, fill: f32) -> f64 {
        let shape = self.geometry.shape;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let c = v[a];
            let upper = (shape[a] - 1) as f64;
            if !(c >= -HULL_EPS && c <= upper + HULL_EPS) {
                return fill as f64;
            }
            let c = c.clamp(0.0, upper);
            let f = c.floor();
            let mut b = f as usize;
            let mut t = c - f;
            if b + 1 >= shape[a] {
                // On the upper face (or a single-voxel axis).
                b = shape[a] - 1;
                t = 0.0;
            }
            base[a] = b;
            frac[a] = t;
        }
        let [i0, j0, k0] = base;
        let [tx, ty, tz] = frac;
        let i1 = if tx > 0.0 { i0 + 1 } else { i0 };
        let j1 = if ty > 0.0 { j0 + 1 } else { j0 };
        let k1 = if tz > 0.0 { k0 + 1 } else { k0 };
        let g = |i, j, k| self.get(i, j, k) as f64;

        let c00 = g(i0, j0, k0) * (1.0 - tx) + g(i1, j0, k0) * tx;
        let c10 = g(i0, j1, k0) * (1.0 - tx) + g(i1, j1, k0) * tx;
        let c01 = g(i0, j0, k1) * (1.0 - tx) + g(i1, j0, k1) * tx;
        let c11 = g(i0, j1, k1) * (1.0 - tx) + g(i1, j1, k1) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        c0 * (1.0 - tz) + c1 * tz
    }
}

/// Geometry of a grid with `new_spacing` over the same world extent and origin.
pub fn resampled_geometry(geometry: &VolumeGeometry, new_spacing: [f64; 3]) -> Result<VolumeGeometry> {
    if new_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!(
            "resample spacing {new_spacing:?} must be positive"
        )));
    }
    let extent = geometry.extent();
    let shape = [0, 1, 2].map(|a| (extent[a] / new_spacing[a] + 1e-9).floor() as usize + 1);
    VolumeGeometry::new(shape, new_spacing, geometry.origin)
}

/// Trilinear resampling onto a grid with `new_spacing` covering the same extent.
pub fn resample_volume(vol: &Volume3D, new_spacing: [f64; 3]) -> Result<Volume3D> {
    let target = resampled_geometry(vol.geometry(), new_spacing)?;
    Ok(Volume3D::from_fn(target, |i, j, k| {
        let p = target.world(Point3::new(i as f64, j as f64, k as f64));
        vol.trilinear_sample(p, DEFAULT_FILL) as f32
    }))
}
