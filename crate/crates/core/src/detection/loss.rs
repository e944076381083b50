use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::encoding::ENCODED_LEN;
use super::targets::DetectionTargets;

/// Network outputs for every anchor: objectness probability and 12 encoded coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub objectness: Vec<f64>,
    pub regression: Vec<f64>,
}

impl Predictions {
    pub fn new(objectness: Vec<f64>, regression: Vec<f64>) -> Result<Self> {
        if regression.len() != ENCODED_LEN * objectness.len() {
            return Err(Error::shape(format!(
                "regression has {} values, expected {} for {} anchors",
                regression.len(),
                ENCODED_LEN * objectness.len(),
                objectness.len()
            )));
        }
        Ok(Self { objectness, regression })
    }

    pub fn n_anchors(&self) -> usize {
        self.objectness.len()
    }

    pub fn encoded(&self, anchor: usize) -> &[f64] {
        &self.regression[anchor * ENCODED_LEN..(anchor + 1) * ENCODED_LEN]
    }

    fn check(&self, targets: &DetectionTargets) -> Result<()> {
        if self.regression.len() != ENCODED_LEN * self.objectness.len() {
            return Err(Error::shape("regression length is not 12 per anchor"));
        }
        if self.n_anchors() != targets.n_anchors() {
            return Err(Error::shape(format!(
                "{} predicted anchors, {} target anchors",
                self.n_anchors(),
                targets.n_anchors()
            )));
        }
        if self.n_anchors() == 0 {
            return Err(Error::invalid("no anchors"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean binary cross-entropy over all anchors.
    pub objectness: f64,
    /// Genant-weighted mean absolute error over positive anchors.
    pub regression: f64,
    pub total: f64,
    pub n_anchors: usize,
    pub n_positive: usize,
}

/// Objectness BCE averaged over all anchors plus, over the positive anchors,
/// the mean absolute regression error divided by the matched Genant index and
/// averaged by the positive count. With no positives the regression term is 0.
pub fn detection_loss(pred: &Predictions, targets: &DetectionTargets, eps: f64) -> Result<LossBreakdown> {
    pred.check(targets)?;
    check_eps(eps)?;
    let n = pred.n_anchors();
    let mut bce = 0.0;
    for (&p, &o) in pred.objectness.iter().zip(targets.objectness()) {
        let p = p.clamp(eps, 1.0 - eps);
        bce -= if o == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    bce /= n as f64;

    let positives = targets.positives();
    let mut reg = 0.0;
    for pos in positives {
        let mae = pred
            .encoded(pos.anchor)
            .iter()
            .zip(&pos.encoded.0)
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / ENCODED_LEN as f64;
        reg += mae / pos.genant;
    }
    if !positives.is_empty() {
        reg /= positives.len() as f64;
    }
    Ok(LossBreakdown {
        objectness: bce,
        regression: reg,
        total: bce + reg,
        n_anchors: n,
        n_positive: positives.len(),
    })
}

/// Gradients of [`detection_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    /// With respect to the objectness probabilities; zero where clipping is active.
    pub objectness: Vec<f64>,
    /// With respect to the objectness logits, `(p - o) / N`, when `p = sigmoid(z)`.
    pub objectness_logit: Vec<f64>,
    /// With respect to the regression outputs; zero on negatives and at the kink.
    pub regression: Vec<f64>,
}

pub fn detection_loss_grad(pred: &Predictions, targets: &DetectionTargets, eps: f64) -> Result<LossGradient> {
    pred.check(targets)?;
    check_eps(eps)?;
    let n = pred.n_anchors() as f64;
    let mut objectness = Vec::with_capacity(pred.n_anchors());
    let mut objectness_logit = Vec::with_capacity(pred.n_anchors());
    for (&p, &o) in pred.objectness.iter().zip(targets.objectness()) {
        let o = f64::from(o);
        objectness_logit.push((p - o) / n);
        if p < eps || p > 1.0 - eps {
            objectness.push(0.0);
        } else {
            objectness.push((-o / p + (1.0 - o) / (1.0 - p)) / n);
        }
    }

    let mut regression = vec![0.0; pred.regression.len()];
    let positives = targets.positives();
    let scale = (ENCODED_LEN * positives.len().max(1)) as f64;
    for pos in positives {
        let base = pos.anchor * ENCODED_LEN;
        for c in 0..ENCODED_LEN {
            let d = pred.regression[base + c] - pos.encoded.0[c];
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            regression[base + c] = sign / (scale * pos.genant);
        }
    }
    Ok(LossGradient {
        objectness,
        objectness_logit,
        regression,
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::invalid(format!("clipping epsilon {eps} outside (0, 0.5)")));
    }
    Ok(())
}
