//! JSON documents written and read by the commands.

use serde::{Deserialize, Serialize};
use vfq_core::config::PipelineConfig;
use vfq_core::genant::{Grade, Heights};
use vfq_core::straighten::TransformRecord;

#[derive(Serialize, Deserialize)]
pub struct TransformFile {
    pub config: PipelineConfig,
    pub transform: TransformRecord,
    /// Decoded centerline on the working grid, world mm.
    pub centerline: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
pub struct VertebraOut {
    pub score: f64,
    pub keypoints: [[f64; 2]; 6],
    pub keypoints_world: [[f64; 3]; 6],
    pub heights: Heights,
    #[serde(rename = "G")]
    pub genant: f64,
    pub grade: Grade,
}

#[derive(Serialize, Deserialize)]
pub struct PatientOut {
    #[serde(rename = "G")]
    pub genant: f64,
    pub grade: Grade,
}

#[derive(Serialize, Deserialize)]
pub struct DetectionsFile {
    pub config: PipelineConfig,
    pub vertebrae: Vec<VertebraOut>,
    pub patient: Option<PatientOut>,
}
