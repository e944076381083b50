//! Localization, detection and fracture classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genant::{genant_index, heights, GradeThresholds, VertebraKeypoints};
use crate::geometry::{iou, Box2D, Point2, Point3};

/// Distance from each predicted center to the nearest ground-truth body center.
pub fn localization_error(pred_centers: &[Point3], gt: &[VertebraKeypoints]) -> Result<Vec<f64>> {
    if gt.is_empty() {
        return Err(Error::invalid("localization error needs ground-truth vertebrae"));
    }
    let centers: Vec<Point3> = gt.iter().map(VertebraKeypoints::center).collect();
    Ok(pred_centers
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|c| (p - c).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Axis-aligned box of the keypoints projected on the world sagittal (y, z) plane.
pub fn sagittal_box(kps: &VertebraKeypoints) -> Result<Box2D> {
    crate::geometry::bbox_from_keypoints(&kps.points.map(|p| Point2::new(p.y, p.z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub detection: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matching {
    pub matches: Vec<Match>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl Matching {
    pub fn tp(&self) -> usize {
        self.matches.len()
    }

    pub fn fp(&self) -> usize {
        self.unmatched_detections.len()
    }

    pub fn fn_(&self) -> usize {
        self.unmatched_gt.len()
    }
}

/// Greedy one-to-one matching. Detections are visited by descending score
/// (ties by index); each claims the unclaimed ground truth of highest IoU if
/// that IoU exceeds `iou_threshold` (ties by lower ground-truth index).
pub fn match_boxes(detections: &[(f64, Box2D)], gt: &[Box2D], iou_threshold: f64) -> Matching {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].0.total_cmp(&detections[a].0).then(a.cmp(&b)));
    let mut claimed = vec![false; gt.len()];
    let mut matching = Matching::default();
    for d in order {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(g, _)| !claimed[*g])
            .map(|(g, b)| (g, iou(&detections[d].1, b)))
            .fold(None::<(usize, f64)>, |acc, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        match best {
            Some((g, v)) if v > iou_threshold => {
                claimed[g] = true;
                matching.matches.push(Match { detection: d, gt: g, iou: v });
            }
            _ => matching.unmatched_detections.push(d),
        }
    }
    matching.matches.sort_by_key(|m| m.detection);
    matching.unmatched_detections.sort_unstable();
    matching.unmatched_gt = (0..gt.len()).filter(|&g| !claimed[g]).collect();
    matching
}

/// A scored vertebra in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredVertebra {
    pub score: f64,
    pub keypoints: VertebraKeypoints,
}

pub fn match_detections(
    detections: &[ScoredVertebra],
    gt: &[VertebraKeypoints],
    iou_threshold: f64,
) -> Result<Matching> {
    let pred = detections
        .iter()
        .map(|d| Ok((d.score, sagittal_box(&d.keypoints)?)))
        .collect::<Result<Vec<_>>>()?;
    let gt = gt.iter().map(sagittal_box).collect::<Result<Vec<_>>>()?;
    Ok(match_boxes(&pred, &gt, iou_threshold))
}

/// Probability that a positive outscores a negative, ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both positive and negative cases".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the Mann-Whitney count: every tie group contributes its midrank.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos = group.iter().filter(|&&k| labels[k]).count() as u128;
        let neg = group.len() as u128 - pos;
        twice_u += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Binary fracture detection at one Genant threshold (fractured: `G <= threshold`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub threshold: f64,
    pub n: usize,
    pub n_positive: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub roc_auc: Option<f64>,
}

/// Scores by `1 - G_pred` against labels `G_gt <= threshold`.
pub fn classification_report(pred_g: &[f64], gt_g: &[f64], threshold: f64) -> Result<BinaryReport> {
    if pred_g.len() != gt_g.len() {
        return Err(Error::shape("predicted and ground-truth G lists differ in length"));
    }
    if pred_g.is_empty() {
        return Err(Error::UndefinedMetric("no matched vertebrae to classify".into()));
    }
    let labels: Vec<bool> = gt_g.iter().map(|&g| g <= threshold).collect();
    let predicted: Vec<bool> = pred_g.iter().map(|&g| g <= threshold).collect();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    let tp = labels.iter().zip(&predicted).filter(|(l, p)| **l && **p).count();
    let tn = labels.iter().zip(&predicted).filter(|(l, p)| !**l && !**p).count();
    let scores: Vec<f64> = pred_g.iter().map(|g| 1.0 - g).collect();
    let roc_auc = match roc_auc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BinaryReport {
        threshold,
        n: labels.len(),
        n_positive: n_pos,
        sensitivity: (n_pos > 0).then(|| tp as f64 / n_pos as f64),
        specificity: (n_neg > 0).then(|| tn as f64 / n_neg as f64),
        roc_auc,
    })
}

/// Detections and ground truth of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub detections: Vec<ScoredVertebra>,
    pub ground_truth: Vec<VertebraKeypoints>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationStats {
    pub n: usize,
    pub mean_mm: Option<f64>,
    pub std_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Recall restricted to ground truths with `G <= moderate cut`.
    pub fractured_tp: usize,
    pub fractured_fn: usize,
    pub fractured_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n: usize,
    pub thresholds: Vec<BinaryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cases: usize,
    pub localization: LocalizationStats,
    pub detection: DetectionStats,
    pub vertebra: Option<LevelReport>,
    pub patient: Option<LevelReport>,
    /// Metrics that could not be computed; patient-level entries need at least two cases.
    pub undefined: Vec<String>,
}

impl EvalReport {
    /// True when a vertebra-level metric is undefined.
    pub fn has_undefined_vertebra_metric(&self) -> bool {
        self.undefined.iter().any(|u| !u.starts_with("patient"))
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let mut out = String::new();
        out.push_str(&format!("cases: {}\n\n", self.cases));
        out.push_str("localization\n");
        out.push_str(&format!("  {:<22}{:>10}\n", "centers", self.localization.n));
        out.push_str(&format!("  {:<22}{:>10}\n", "mean error (mm)", f(self.localization.mean_mm)));
        out.push_str(&format!("  {:<22}{:>10}\n\n", "std (mm)", f(self.localization.std_mm)));
        let d = &self.detection;
        out.push_str("detection\n");
        out.push_str(&format!("  {:<22}{:>10}{:>10}{:>10}\n", "", "TP", "FP", "FN"));
        out.push_str(&format!("  {:<22}{:>10}{:>10}{:>10}\n", "counts", d.tp, d.fp, d.fn_));
        out.push_str(&format!("  {:<22}{:>10}\n", "precision", f(d.precision)));
        out.push_str(&format!("  {:<22}{:>10}\n", "recall", f(d.recall)));
        out.push_str(&format!("  {:<22}{:>10}\n\n", "recall (fractured)", f(d.fractured_recall)));
        out.push_str("classification\n");
        out.push_str(&format!(
            "  {:<10}{:>10}{:>6}{:>6}{:>14}{:>14}{:>10}\n",
            "level", "G <=", "n", "pos", "sensitivity", "specificity", "AUC"
        ));
        for (name, level) in [("vertebra", &self.vertebra), ("patient", &self.patient)] {
            match level {
                Some(level) => {
                    for b in &level.thresholds {
                        out.push_str(&format!(
                            "  {:<10}{:>10.2}{:>6}{:>6}{:>14}{:>14}{:>10}\n",
                            name,
                            b.threshold,
                            b.n,
                            b.n_positive,
                            f(b.sensitivity),
                            f(b.specificity),
                            f(b.roc_auc)
                        ));
                    }
                }
                None => out.push_str(&format!("  {name:<10}{:>10}\n", "n/a")),
            }
        }
        if !self.undefined.is_empty() {
            out.push_str("\nundefined:\n");
            for u in &self.undefined {
                out.push_str(&format!("  {u}\n"));
            }
        }
        out
    }
}

fn keypoint_genant(k: &VertebraKeypoints) -> Result<f64> {
    let h = heights(k)?;
    genant_index(h.anterior, h.middle, h.posterior)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn level_report(
    name: &str,
    pred: &[f64],
    gt: &[f64],
    cuts: &GradeThresholds,
    undefined: &mut Vec<String>,
) -> Result<Option<LevelReport>> {
    if pred.is_empty() {
        undefined.push(format!("{name}: no vertebrae to classify"));
        return Ok(None);
    }
    let mut thresholds = Vec::new();
    for t in [cuts.mild, cuts.moderate] {
        let b = classification_report(pred, gt, t)?;
        if b.roc_auc.is_none() {
            undefined.push(format!("{name} ROC AUC at G <= {t}: single class"));
        }
        thresholds.push(b);
    }
    Ok(Some(LevelReport { n: pred.len(), thresholds }))
}

/// Full report over cases. Vertebra-level classification uses matched pairs;
/// patient-level uses the minimum G over all detections and over all ground
/// truths of each case and needs at least two cases.
pub fn evaluate(cases: &[EvalCase], match_iou: f64, cuts: &GradeThresholds) -> Result<EvalReport> {
    cuts.validate()?;
    let mut undefined = Vec::new();
    let mut loc = Vec::new();
    let (mut tp, mut fp, mut fn_, mut ftp, mut ffn) = (0, 0, 0, 0, 0);
    let (mut pred_v, mut gt_v) = (Vec::new(), Vec::new());
    let (mut pred_p, mut gt_p) = (Vec::new(), Vec::new());
    for case in cases {
        let gt_g = case.ground_truth.iter().map(keypoint_genant).collect::<Result<Vec<_>>>()?;
        let pred_g = case
            .detections
            .iter()
            .map(|d| keypoint_genant(&d.keypoints))
            .collect::<Result<Vec<_>>>()?;
        if !case.ground_truth.is_empty() {
            let centers: Vec<Point3> = case.detections.iter().map(|d| d.keypoints.center()).collect();
            loc.extend(localization_error(&centers, &case.ground_truth)?);
        }
        let m = match_detections(&case.detections, &case.ground_truth, match_iou)?;
        tp += m.tp();
        fp += m.fp();
        fn_ += m.fn_();
        for mt in &m.matches {
            pred_v.push(pred_g[mt.detection]);
            gt_v.push(gt_g[mt.gt]);
            if gt_g[mt.gt] <= cuts.moderate {
                ftp += 1;
            }
        }
        ffn += m.unmatched_gt.iter().filter(|&&g| gt_g[g] <= cuts.moderate).count();
        if let Some(g) = gt_g.iter().copied().reduce(f64::min) {
            // A case without detections reads as fracture-free.
            pred_p.push(pred_g.iter().copied().fold(1.0, f64::min));
            gt_p.push(g);
        }
    }

    let (mean_mm, std_mm) = mean_std(&loc);
    if mean_mm.is_none() {
        undefined.push("localization: no detections".into());
    }
    let detection = DetectionStats {
        tp,
        fp,
        fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        fractured_tp: ftp,
        fractured_fn: ffn,
        fractured_recall: ratio(ftp, ftp + ffn),
    };
    if detection.precision.is_none() {
        undefined.push("precision: no detections".into());
    }
    if detection.recall.is_none() {
        undefined.push("recall: no ground truth".into());
    }
    if detection.fractured_recall.is_none() {
        undefined.push(format!("fractured recall: no ground truth with G <= {}", cuts.moderate));
    }
    let vertebra = level_report("vertebra", &pred_v, &gt_v, cuts, &mut undefined)?;
    let patient = if pred_p.len() >= 2 {
        level_report("patient", &pred_p, &gt_p, cuts, &mut undefined)?
    } else {
        undefined.push("patient: fewer than two cases".into());
        None
    };
    Ok(EvalReport {
        cases: cases.len(),
        localization: LocalizationStats {
            n: loc.len(),
            mean_mm,
            std_mm,
        },
        detection,
        vertebra,
        patient,
        undefined,
    })
}
