use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{bbox_from_keypoints, iou, Box2D, Keypoints2D};

use super::anchors::AnchorGrid;
use super::encoding::{encode_keypoints, EncodedKeypoints};

/// One annotated vertebra in image coordinates with its Genant index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub keypoints: Keypoints2D,
    pub genant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveAnchor {
    pub anchor: usize,
    pub gt: usize,
    pub iou: f64,
    /// Positive only because it is its ground truth's best anchor.
    pub forced: bool,
    pub encoded: EncodedKeypoints,
    pub genant: f64,
}

/// Per-anchor objectness plus encoded keypoints and weights of the positives.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTargets {
    objectness: Vec<u8>,
    positives: Vec<PositiveAnchor>,
    gt_boxes: Vec<Box2D>,
}

impl DetectionTargets {
    pub fn n_anchors(&self) -> usize {
        self.objectness.len()
    }

    /// 0/1 objectness for every anchor.
    pub fn objectness(&self) -> &[u8] {
        &self.objectness
    }

    /// Positive anchors in increasing anchor order.
    pub fn positives(&self) -> &[PositiveAnchor] {
        &self.positives
    }

    pub fn gt_boxes(&self) -> &[Box2D] {
        &self.gt_boxes
    }

    /// Targets with different Genant weights, same assignment.
    pub fn with_genant(&self, genant: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.positives {
            p.genant = genant(p.gt);
        }
        out
    }
}

/// Marks anchors whose IoU with a ground-truth box exceeds `iou_threshold`
/// (matched to the highest-IoU ground truth) and forces each ground truth's
/// best anchor positive.
pub fn assign_targets(anchors: &AnchorGrid, gt: &[GroundTruth], iou_threshold: f64) -> Result<DetectionTargets> {
    let n = anchors.len();
    let gt_boxes = gt
        .iter()
        .map(|g| bbox_from_keypoints(&g.keypoints))
        .collect::<Result<Vec<_>>>()?;
    for (i, g) in gt.iter().enumerate() {
        if !(g.genant > 0.0 && g.genant <= 1.0) {
            return Err(Error::invalid(format!(
                "ground truth {i} has Genant index {} outside (0, 1]",
                g.genant
            )));
        }
    }

    let (max_w, max_h) = anchors
        .sizes_px()
        .iter()
        .fold((0f64, 0f64), |(w, h), &(aw, ah)| (w.max(aw), h.max(ah)));
    let cols = anchors.width() as i64;
    let rows = anchors.height() as i64;

    // anchor -> (best iou, gt); candidates per gt as (iou, anchor).
    let mut best: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut candidates: Vec<Vec<(f64, usize)>> = Vec::with_capacity(gt.len());
    for (g, b) in gt_boxes.iter().enumerate() {
        let c0 = ((b.min_x() - 0.5 * max_w).floor() as i64).clamp(0, cols);
        let c1 = ((b.max_x() + 0.5 * max_w).ceil() as i64 + 1).clamp(0, cols);
        let r0 = ((b.min_y() - 0.5 * max_h).floor() as i64).clamp(0, rows);
        let r1 = ((b.max_y() + 0.5 * max_h).ceil() as i64 + 1).clamp(0, rows);
        let mut cands = Vec::new();
        for row in r0..r1 {
            for col in c0..c1 {
                for slot in 0..anchors.per_position() {
                    let idx = anchors.index(col as usize, row as usize, slot);
                    let v = iou(&anchors.anchor(idx), b);
                    if v <= 0.0 {
                        continue;
                    }
                    cands.push((v, idx));
                    let entry = best.entry(idx).or_insert((v, g));
                    if v > entry.0 {
                        *entry = (v, g);
                    }
                }
            }
        }
        if cands.is_empty() {
            return Err(Error::invalid(format!(
                "ground truth {g} does not overlap any anchor"
            )));
        }
        // Highest IoU first, lowest anchor index among ties.
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        candidates.push(cands);
    }

    // anchor -> (gt, iou, forced)
    let mut assigned: BTreeMap<usize, (usize, f64, bool)> = best
        .into_iter()
        .filter(|(_, (v, _))| *v > iou_threshold)
        .map(|(idx, (v, g))| (idx, (g, v, false)))
        .collect();
    let mut forced: BTreeMap<usize, usize> = BTreeMap::new();
    for (g, cands) in candidates.iter().enumerate() {
        let (v, idx) = *cands
            .iter()
            .find(|(_, idx)| !forced.contains_key(idx))
            .ok_or_else(|| Error::degenerate(format!("no free anchor for ground truth {g}")))?;
        forced.insert(idx, g);
        let already = matches!(assigned.get(&idx), Some((owner, _, _)) if *owner == g);
        assigned.insert(idx, (g, v, !already));
    }

    let mut objectness = vec![0u8; n];
    let positives = assigned
        .into_iter()
        .map(|(idx, (g, v, forced))| {
            objectness[idx] = 1;
            PositiveAnchor {
                anchor: idx,
                gt: g,
                iou: v,
                forced,
                encoded: encode_keypoints(&gt[g].keypoints, &anchors.anchor(idx)),
                genant: gt[g].genant,
            }
        })
        .collect();
    Ok(DetectionTargets {
        objectness,
        positives,
        gt_boxes,
    })
}
