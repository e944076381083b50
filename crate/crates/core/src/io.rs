//! VG1 volume and VA1 annotation files.
//!
//! A VG1 volume is a JSON header naming a raw little-endian `f32` file
//! (x fastest) relative to the header's directory. A VA1 file is JSON with a
//! `vertebrae` list of six labelled world-mm keypoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genant::{kp, VertebraKeypoints};
use crate::geometry::Point3;
use crate::volume::{Volume3D, VolumeGeometry};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Vg1Header {
    shape: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    dtype: String,
    data: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header: Vg1Header =
        serde_json::from_str(&text).map_err(|e| format_err(path, format!("bad VG1 header: {e}")))?;
    if header.dtype != "f32" {
        return Err(format_err(path, format!("unsupported dtype {:?}", header.dtype)));
    }
    let geometry = VolumeGeometry::new(header.shape, header.spacing, header.origin)
        .map_err(|e| format_err(path, e.to_string()))?;
    let data_path = path.parent().unwrap_or(Path::new("")).join(&header.data);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    if bytes.len() != 4 * geometry.len() {
        return Err(format_err(
            &data_path,
            format!("expected {} bytes for shape {:?}, found {}", 4 * geometry.len(), header.shape, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3D::new(geometry, data)
}

/// Writes the header to `path` and the samples next to it with a `.raw` extension.
pub fn write_volume(path: &Path, vol: &Volume3D) -> Result<PathBuf> {
    let data_path = path.with_extension("raw");
    let data_name = data_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad output path {}", path.display())))?
        .to_string();
    let g = vol.geometry();
    let header = Vg1Header {
        shape: g.shape,
        spacing: g.spacing,
        origin: g.origin,
        dtype: "f32".into(),
        data: data_name,
    };
    let mut bytes = Vec::with_capacity(4 * vol.data().len());
    for v in vol.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&data_path, bytes).map_err(io_err(&data_path))?;
    write_json(path, &header)?;
    Ok(data_path)
}

/// One annotated vertebra.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub label: Option<String>,
    pub keypoints: VertebraKeypoints,
}

#[derive(Serialize, Deserialize)]
struct Va1File {
    vertebrae: Vec<Va1Vertebra>,
}

#[derive(Serialize, Deserialize)]
struct Va1Vertebra {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    keypoints_mm: BTreeMap<String, [f64; 3]>,
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text).map_err(|e| format_err(path, e))
}

pub fn parse_annotations(text: &str) -> std::result::Result<Vec<Annotation>, String> {
    let file: Va1File = serde_json::from_str(text).map_err(|e| format!("bad VA1 file: {e}"))?;
    file.vertebrae
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut points = [Point3::zeros(); 6];
            for (slot, name) in kp::LABELS.iter().enumerate() {
                let p = v
                    .keypoints_mm
                    .get(*name)
                    .ok_or_else(|| format!("vertebra {i} lacks keypoint {name:?}"))?;
                points[slot] = Point3::new(p[0], p[1], p[2]);
            }
            if let Some(extra) = v.keypoints_mm.keys().find(|k| !kp::LABELS.contains(&k.as_str())) {
                return Err(format!("vertebra {i} has unknown keypoint {extra:?}"));
            }
            let keypoints = VertebraKeypoints::new(points).map_err(|e| format!("vertebra {i}: {e}"))?;
            Ok(Annotation { label: v.label, keypoints })
        })
        .collect()
}

pub fn annotations_to_json(annotations: &[Annotation]) -> serde_json::Value {
    let file = Va1File {
        vertebrae: annotations
            .iter()
            .map(|a| Va1Vertebra {
                label: a.label.clone(),
                keypoints_mm: kp::LABELS
                    .iter()
                    .zip(a.keypoints.points)
                    .map(|(name, p)| (name.to_string(), [p.x, p.y, p.z]))
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_value(file).expect("annotation serialization")
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    write_json(path, &annotations_to_json(annotations))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}
