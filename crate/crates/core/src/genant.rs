//! Vertebral body heights, the Genant deformity index and severity grades.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Index of each keypoint in [`VertebraKeypoints::points`].
pub mod kp {
    pub const ANTERIOR_SUPERIOR: usize = 0;
    pub const ANTERIOR_INFERIOR: usize = 1;
    pub const MIDDLE_SUPERIOR: usize = 2;
    pub const MIDDLE_INFERIOR: usize = 3;
    pub const POSTERIOR_SUPERIOR: usize = 4;
    pub const POSTERIOR_INFERIOR: usize = 5;

    /// Short labels used in annotation files, in storage order.
    pub const LABELS: [&str; 6] = ["as", "ai", "ms", "mi", "ps", "pi"];
}

/// Six height keypoints of a vertebral body in world mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertebraKeypoints {
    pub points: [Point3; 6],
}

impl VertebraKeypoints {
    pub fn new(points: [Point3; 6]) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("keypoints must be finite"));
        }
        Ok(Self { points })
    }

    /// Superior/inferior pairs: anterior, middle, posterior.
    pub fn pairs(&self) -> [(Point3, Point3); 3] {
        [0, 2, 4].map(|i| (self.points[i], self.points[i + 1]))
    }

    /// Vertebral body center: midpoint of the middle-height endpoints.
    pub fn center(&self) -> Point3 {
        0.5 * (self.points[kp::MIDDLE_SUPERIOR] + self.points[kp::MIDDLE_INFERIOR])
    }

    /// Checks that every superior point lies above (greater z) its inferior partner.
    pub fn check_orientation(&self) -> Result<()> {
        for (name, (sup, inf)) in ["anterior", "middle", "posterior"].iter().zip(self.pairs()) {
            if sup.z <= inf.z {
                return Err(Error::invalid(format!(
                    "{name} superior keypoint is not above its inferior keypoint"
                )));
            }
        }
        Ok(())
    }
}

/// Anterior, middle and posterior heights in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heights {
    pub anterior: f64,
    pub middle: f64,
    pub posterior: f64,
}

impl Heights {
    pub fn as_array(&self) -> [f64; 3] {
        [self.anterior, self.middle, self.posterior]
    }
}

/// Euclidean superior-inferior distances for each of the three pairs.
pub fn heights(kps: &VertebraKeypoints) -> Result<Heights> {
    let [a, m, p] = kps.pairs().map(|(s, i)| (s - i).norm());
    if [a, m, p].iter().any(|&h| !(h > 0.0)) {
        return Err(Error::degenerate("coincident superior and inferior keypoints"));
    }
    Ok(Heights {
        anterior: a,
        middle: m,
        posterior: p,
    })
}

/// `min(h) / max(h)` over the three heights.
pub fn genant_index(h_a: f64, h_m: f64, h_p: f64) -> Result<f64> {
    let hs = [h_a, h_m, h_p];
    if hs.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return Err(Error::invalid(format!("heights must be positive, got {hs:?}")));
    }
    let lo = hs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(lo / hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grade {
    Normal,
    Mild,
    Moderate,
    Severe,
}

/// Upper (inclusive) G bounds of each fracture grade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradeThresholds {
    pub mild: f64,
    pub moderate: f64,
    pub severe: f64,
}

impl Default for GradeThresholds {
    fn default() -> Self {
        Self {
            mild: 0.8,
            moderate: 0.74,
            severe: 0.6,
        }
    }
}

impl GradeThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.mild > self.moderate && self.moderate > self.severe && self.severe > 0.0 && self.mild <= 1.0) {
            return Err(Error::invalid(format!(
                "grade cuts must satisfy 1 >= mild > moderate > severe > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn grade(g: f64, cuts: &GradeThresholds) -> Grade {
    if g > cuts.mild {
        Grade::Normal
    } else if g > cuts.moderate {
        Grade::Mild
    } else if g > cuts.severe {
        Grade::Moderate
    } else {
        Grade::Severe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenantMeasurement {
    pub heights: Heights,
    #[serde(rename = "G")]
    pub index: f64,
    pub grade: Grade,
}

pub fn measure(kps: &VertebraKeypoints, cuts: &GradeThresholds) -> Result<GenantMeasurement> {
    let h = heights(kps)?;
    let index = genant_index(h.anterior, h.middle, h.posterior)?;
    Ok(GenantMeasurement {
        heights: h,
        index,
        grade: grade(index, cuts),
    })
}

/// Patient-level score: the most severe (minimal) G and its grade.
pub fn patient_score(scores: &[f64], cuts: &GradeThresholds) -> Result<(f64, Grade)> {
    let g = scores
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::invalid("patient score needs at least one vertebra"))?;
    Ok((g, grade(g, cuts)))
}
