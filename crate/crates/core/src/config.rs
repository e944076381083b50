//! Pipeline parameters with their defaults.

use serde::{Deserialize, Serialize};

use crate::detection::AnchorConfig;
use crate::error::{Error, Result};
use crate::genant::GradeThresholds;
use crate::localization::SoftArgmaxMode;
use crate::volume::DEFAULT_FILL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterlineConfig {
    pub mode: SoftArgmaxMode,
    /// Roughness penalty of the smoothing spline fitted to `x(z)`, `y(z)`.
    pub smoothing: f64,
}

impl Default for CenterlineConfig {
    fn default() -> Self {
        Self {
            mode: SoftArgmaxMode::Probabilities,
            smoothing: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StraightenConfig {
    /// Output spacing and arc-length step, mm.
    pub delta: f64,
    /// Half extents of the normal planes along the left-right and
    /// anterior-posterior axes, mm.
    pub half_extent: [f64; 2],
    /// Straight extension added beyond each end of the centerline, mm.
    pub end_margin_mm: f64,
    pub fill: f32,
    /// Half width (planes) of the slab averaged into the sagittal image; 0 takes one plane.
    pub sagittal_window: usize,
}

impl Default for StraightenConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            half_extent: [60.0, 60.0],
            end_margin_mm: 15.0,
            fill: DEFAULT_FILL,
            sagittal_window: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub objectness_threshold: f64,
    pub nms_iou: f64,
    pub positive_iou: f64,
    pub bce_epsilon: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            objectness_threshold: 0.5,
            nms_iou: 0.45,
            positive_iou: 0.5,
            bce_epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub match_iou: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { match_iou: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Isotropic spacing of the working volume used for centerline decoding, mm.
    pub working_spacing_mm: f64,
    pub centerline: CenterlineConfig,
    pub straighten: StraightenConfig,
    pub anchors: AnchorConfig,
    pub detection: DetectionConfig,
    pub grading: GradeThresholds,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            working_spacing_mm: 3.0,
            centerline: CenterlineConfig::default(),
            straighten: StraightenConfig::default(),
            anchors: AnchorConfig::default(),
            detection: DetectionConfig::default(),
            grading: GradeThresholds::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        positive("working spacing", self.working_spacing_mm)?;
        if !(self.centerline.smoothing >= 0.0 && self.centerline.smoothing.is_finite()) {
            return Err(Error::invalid("centerline smoothing must be >= 0"));
        }
        if let SoftArgmaxMode::Logits { temperature } = self.centerline.mode {
            positive("soft-argmax temperature", temperature)?;
        }
        let s = &self.straighten;
        positive("straightening delta", s.delta)?;
        if s.half_extent.iter().any(|h| !(*h >= 0.0 && h.is_finite())) || !(s.end_margin_mm >= 0.0) {
            return Err(Error::invalid("straightening extents must be non-negative"));
        }
        let d = &self.detection;
        unit("objectness threshold", d.objectness_threshold)?;
        unit("NMS IoU", d.nms_iou)?;
        unit("positive IoU", d.positive_iou)?;
        if !(d.bce_epsilon > 0.0 && d.bce_epsilon < 0.5) {
            return Err(Error::invalid("BCE epsilon must lie in (0, 0.5)"));
        }
        unit("match IoU", self.evaluation.match_iou)?;
        crate::detection::AnchorGrid::new(1, 1, 1.0, &self.anchors)?;
        self.grading.validate()
    }
}
