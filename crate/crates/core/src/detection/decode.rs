use crate::error::{Error, Result};
use crate::geometry::{bbox_from_keypoints, iou, Box2D, Keypoints2D};

use super::anchors::AnchorGrid;
use super::encoding::decode_keypoints;
use super::loss::Predictions;

/// A decoded vertebra on the straightened image, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub anchor: usize,
    pub bbox: Box2D,
    pub keypoints: Keypoints2D,
}

/// Greedy non-maximum suppression. Candidates are visited by descending
/// score, ties by ascending anchor index; a candidate is dropped when its IoU
/// with an already kept box exceeds `iou_threshold`.
pub fn nms(candidates: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (a, b) = (&candidates[a], &candidates[b]);
        b.score.total_cmp(&a.score).then(a.anchor.cmp(&b.anchor))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let c = candidates[i];
        if kept.iter().all(|k| iou(&k.bbox, &c.bbox) <= iou_threshold) {
            kept.push(c);
        }
    }
    kept
}

/// Thresholds objectness, decodes the surviving anchors and suppresses duplicates.
pub fn detect(
    pred: &Predictions,
    anchors: &AnchorGrid,
    score_threshold: f64,
    iou_threshold: f64,
) -> Result<Vec<Detection>> {
    if pred.n_anchors() != anchors.len() || pred.regression.len() != 12 * anchors.len() {
        return Err(Error::shape(format!(
            "prediction maps cover {} anchors, grid has {}",
            pred.n_anchors(),
            anchors.len()
        )));
    }
    let mut candidates = Vec::new();
    for (idx, &score) in pred.objectness.iter().enumerate() {
        if !score.is_finite() {
            return Err(Error::invalid(format!("non-finite objectness at anchor {idx}")));
        }
        if score < score_threshold {
            continue;
        }
        let keypoints = decode_keypoints(pred.encoded(idx), &anchors.anchor(idx));
        if keypoints.iter().any(|p| !p.is_finite()) {
            continue;
        }
        let Ok(bbox) = bbox_from_keypoints(&keypoints) else {
            continue;
        };
        candidates.push(Detection {
            score,
            anchor: idx,
            bbox,
            keypoints,
        });
    }
    Ok(nms(&candidates, iou_threshold))
}
