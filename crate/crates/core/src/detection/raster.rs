//! Prediction maps as volumes: `(width, height, planes)` with one objectness
//! plane per anchor slot and twelve regression planes per slot
//! (plane `slot * 12 + coordinate`).

use crate::error::{Error, Result};
use crate::volume::{Volume3D, VolumeGeometry};

use super::anchors::AnchorGrid;
use super::encoding::ENCODED_LEN;

fn geometry(grid: &AnchorGrid, planes: usize) -> Result<VolumeGeometry> {
    let s = grid.pixel_spacing();
    VolumeGeometry::new([grid.width(), grid.height(), planes], [s, s, 1.0], [0.0; 3])
}

fn check(grid: &AnchorGrid, vol: &Volume3D, planes: usize, what: &str) -> Result<()> {
    let expected = [grid.width(), grid.height(), planes];
    if vol.shape() != expected {
        return Err(Error::shape(format!(
            "{what} map has shape {:?}, anchor grid needs {expected:?}",
            vol.shape()
        )));
    }
    Ok(())
}

/// Per-anchor values (in anchor index order) to a plane-per-slot volume.
pub fn objectness_to_volume(grid: &AnchorGrid, values: &[f64]) -> Result<Volume3D> {
    if values.len() != grid.len() {
        return Err(Error::shape("objectness length does not match the anchor grid"));
    }
    let a = grid.per_position();
    let w = grid.width();
    Ok(Volume3D::from_fn(geometry(grid, a)?, |x, y, slot| {
        values[(y * w + x) * a + slot] as f32
    }))
}

pub fn objectness_from_volume(grid: &AnchorGrid, vol: &Volume3D) -> Result<Vec<f64>> {
    let a = grid.per_position();
    check(grid, vol, a, "objectness")?;
    let mut out = Vec::with_capacity(grid.len());
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            for slot in 0..a {
                out.push(f64::from(vol.get(x, y, slot)));
            }
        }
    }
    Ok(out)
}

pub fn regression_to_volume(grid: &AnchorGrid, values: &[f64]) -> Result<Volume3D> {
    if values.len() != ENCODED_LEN * grid.len() {
        return Err(Error::shape("regression length does not match the anchor grid"));
    }
    let a = grid.per_position();
    let w = grid.width();
    Ok(Volume3D::from_fn(geometry(grid, a * ENCODED_LEN)?, |x, y, plane| {
        let (slot, c) = (plane / ENCODED_LEN, plane % ENCODED_LEN);
        values[((y * w + x) * a + slot) * ENCODED_LEN + c] as f32
    }))
}

pub fn regression_from_volume(grid: &AnchorGrid, vol: &Volume3D) -> Result<Vec<f64>> {
    let a = grid.per_position();
    check(grid, vol, a * ENCODED_LEN, "regression")?;
    let mut out = Vec::with_capacity(grid.len() * ENCODED_LEN);
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            for plane in 0..a * ENCODED_LEN {
                out.push(f64::from(vol.get(x, y, plane)));
            }
        }
    }
    Ok(out)
}
