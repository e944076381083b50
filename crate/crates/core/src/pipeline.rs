//! Stage wiring: centerline decoding, straightening, target projection and
//! scoring of detections in world space.

use crate::config::PipelineConfig;
use crate::detection::{detect, AnchorGrid, Detection, GroundTruth, Predictions};
use crate::error::{Error, Result};
use crate::genant::{measure, patient_score, Grade, GenantMeasurement, GradeThresholds, VertebraKeypoints};
use crate::geometry::{Keypoints2D, Point2, Point3};
use crate::localization::{centerline_from_volume, centerline_target, upsample_curve, CenterlinePolyline};
use crate::straighten::{
    build_spine_curve, mid_sagittal_slab, straighten_volume, SpineCurve, StraightenTransform, StraightenedImage,
};
use crate::volume::{resample_volume, Volume3D};

/// Where the centerline comes from.
#[derive(Debug, Clone, Copy)]
pub enum CenterlineSource<'a> {
    /// Per-slice probability maps with their own geometry.
    Heatmaps(&'a Volume3D),
    /// Annotated vertebrae; the interpolated target on the working grid.
    Annotations(&'a [VertebraKeypoints]),
}

#[derive(Debug, Clone)]
pub struct Straightened {
    /// The input resampled to the working spacing.
    pub working: Volume3D,
    /// Decoded centerline, world frame, one point per working slice.
    pub centerline: CenterlinePolyline,
    pub curve: SpineCurve,
    pub volume: Volume3D,
    pub image: StraightenedImage,
}

impl Straightened {
    pub fn transform(&self) -> &StraightenTransform {
        self.image.transform()
    }
}

/// Working-resolution centerline, upsampled to the input slices, smoothed,
/// extended at both ends and used to straighten `vol`.
pub fn straighten(vol: &Volume3D, source: CenterlineSource<'_>, cfg: &PipelineConfig) -> Result<Straightened> {
    cfg.validate()?;
    let working = resample_volume(vol, [cfg.working_spacing_mm; 3])?;
    let centerline = match source {
        CenterlineSource::Heatmaps(maps) => centerline_from_volume(maps, cfg.centerline.mode)?,
        CenterlineSource::Annotations(kps) => centerline_target(kps, working.geometry())?,
    };
    let dense = upsample_curve(&centerline, vol.origin()[2], vol.spacing()[2])?;
    let s = &cfg.straighten;
    let curve = build_spine_curve(&dense, s.delta, cfg.centerline.smoothing)?.extended(s.end_margin_mm);
    let (volume, transform) = straighten_volume(vol, &curve, s.delta, s.half_extent, s.fill)?;
    let image = mid_sagittal_slab(&volume, &transform, s.sagittal_window)?;
    Ok(Straightened {
        working,
        centerline,
        curve,
        volume,
        image,
    })
}

pub fn anchor_grid(image: &StraightenedImage, cfg: &PipelineConfig) -> Result<AnchorGrid> {
    AnchorGrid::new(image.width(), image.height(), image.transform().delta(), &cfg.anchors)
}

/// Annotated vertebrae projected onto the sagittal image, with their world G.
pub fn project_annotations(
    annotations: &[VertebraKeypoints],
    transform: &StraightenTransform,
) -> Result<Vec<GroundTruth>> {
    annotations
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let h = crate::genant::heights(a)?;
            let genant = crate::genant::genant_index(h.anterior, h.middle, h.posterior)?;
            let mut keypoints = [Point2::default(); 6];
            for (dst, p) in keypoints.iter_mut().zip(a.points) {
                *dst = transform
                    .to_image(p)
                    .map_err(|e| Error::OutOfBounds(format!("vertebra {i}: {e}")))?
                    .0;
            }
            Ok(GroundTruth { keypoints, genant })
        })
        .collect()
}

/// One graded vertebra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredVertebra {
    pub score: f64,
    pub keypoints: Keypoints2D,
    pub keypoints_world: VertebraKeypoints,
    pub measurement: GenantMeasurement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub vertebrae: Vec<ScoredVertebra>,
    /// Minimum G over vertebrae and its grade.
    pub patient: Option<(f64, Grade)>,
}

fn finish(vertebrae: Vec<ScoredVertebra>, cuts: &GradeThresholds) -> Result<ScoreResult> {
    let gs: Vec<f64> = vertebrae.iter().map(|v| v.measurement.index).collect();
    let patient = if gs.is_empty() { None } else { Some(patient_score(&gs, cuts)?) };
    Ok(ScoreResult { vertebrae, patient })
}

/// Maps detections back to world space and grades them. Vertebrae are
/// ordered along the image rows.
pub fn score_detections(
    detections: &[Detection],
    transform: &StraightenTransform,
    cuts: &GradeThresholds,
) -> Result<ScoreResult> {
    let mut out = Vec::with_capacity(detections.len());
    for d in detections {
        let mut world = [Point3::zeros(); 6];
        for (dst, p) in world.iter_mut().zip(d.keypoints) {
            *dst = transform.to_world(p)?;
        }
        let keypoints_world = VertebraKeypoints::new(world)?;
        out.push(ScoredVertebra {
            score: d.score,
            keypoints: d.keypoints,
            keypoints_world,
            measurement: measure(&keypoints_world, cuts)?,
        });
    }
    out.sort_by(|a, b| {
        let ya = a.keypoints.iter().map(|p| p.y).sum::<f64>();
        let yb = b.keypoints.iter().map(|p| p.y).sum::<f64>();
        ya.total_cmp(&yb)
    });
    finish(out, cuts)
}

/// Grades annotated keypoints directly, without detection.
pub fn score_annotations(
    annotations: &[VertebraKeypoints],
    transform: &StraightenTransform,
    cuts: &GradeThresholds,
) -> Result<ScoreResult> {
    let gt = project_annotations(annotations, transform)?;
    let vertebrae = annotations
        .iter()
        .zip(gt)
        .map(|(a, g)| {
            Ok(ScoredVertebra {
                score: 1.0,
                keypoints: g.keypoints,
                keypoints_world: *a,
                measurement: measure(a, cuts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    finish(vertebrae, cuts)
}

/// Thresholds, decodes and grades prediction maps over the sagittal image.
pub fn score_predictions(
    pred: &Predictions,
    image: &StraightenedImage,
    cfg: &PipelineConfig,
) -> Result<ScoreResult> {
    let anchors = anchor_grid(image, cfg)?;
    let dets = detect(
        pred,
        &anchors,
        cfg.detection.objectness_threshold,
        cfg.detection.nms_iou,
    )?;
    score_detections(&dets, image.transform(), &cfg.grading)
}
