use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use vfq_core::config::PipelineConfig;
use vfq_core::detection::{
    assign_targets, detection_loss, detection_loss_grad, objectness_from_volume, objectness_to_volume,
    regression_from_volume, regression_to_volume, DetectionTargets, Predictions, ENCODED_LEN,
};
use vfq_core::eval::{evaluate as run_evaluation, EvalCase, ScoredVertebra as EvalVertebra};
use vfq_core::genant::{grade, VertebraKeypoints};
use vfq_core::geometry::Point3;
use vfq_core::io::{read_annotations, read_json, read_volume, write_annotations, write_json, write_volume};
use vfq_core::phantom::{generate_phantom, oracle_heatmaps, PhantomConfig};
use vfq_core::pipeline::{self, CenterlineSource, ScoreResult};
use vfq_core::straighten::{StraightenTransform, StraightenedImage, TransformRecord};
use vfq_core::volume::resampled_geometry;
use vfq_core::Error;

use crate::files::{DetectionsFile, PatientOut, TransformFile, VertebraOut};
use crate::{EvaluateArgs, Overrides, PhantomArgs, ScoreArgs, StraightenArgs, TargetsArgs};

pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UndefinedMetric(_) => 4,
            e if e.is_input_error() => 2,
            _ => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<u8, CliError>;

fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

fn prepare_output(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))
}

/// Reads the configuration file (a bare config or an object holding one under
/// "config") and applies the command-line overrides.
fn resolve_config(o: &Overrides) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => {
            let value: Value = read_json(path)?;
            let inner = match value.get("config") {
                Some(c) if value.is_object() => c.clone(),
                _ => value,
            };
            serde_json::from_value(inner).map_err(|e| input_error(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.spacing {
        cfg.working_spacing_mm = v;
    }
    if let Some(v) = o.delta {
        cfg.straighten.delta = v;
    }
    if let Some(v) = o.objectness_thresh {
        cfg.detection.objectness_threshold = v;
    }
    if let Some(v) = o.nms_iou {
        cfg.detection.nms_iou = v;
    }
    if let Some(v) = o.mild_cut {
        cfg.grading.mild = v;
    }
    if let Some(v) = o.moderate_cut {
        cfg.grading.moderate = v;
    }
    if let Some(v) = o.severe_cut {
        cfg.grading.severe = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn keypoints_of(path: &Path) -> Result<Vec<VertebraKeypoints>, CliError> {
    Ok(read_annotations(path)?.into_iter().map(|a| a.keypoints).collect())
}

fn load_transform(path: &Path) -> Result<StraightenTransform, CliError> {
    let file: TransformFile = read_json(path)?;
    Ok(StraightenTransform::try_from(file.transform)?)
}

fn load_image(sagittal: &Path, transform: &Path) -> Result<StraightenedImage, CliError> {
    let transform = load_transform(transform)?;
    let vol = read_volume(sagittal)?;
    Ok(StraightenedImage::from_volume(&vol, transform)?)
}

pub fn phantom(args: &PhantomArgs) -> CliResult {
    let mut cfg: PhantomConfig = match &args.config {
        Some(path) => {
            let value: Value = read_json(path)?;
            let inner = match value.get("phantom") {
                Some(c) if value.is_object() => c.clone(),
                _ => value,
            };
            serde_json::from_value(inner).map_err(|e| input_error(format!("{}: {e}", path.display())))?
        }
        None => PhantomConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let phantom = generate_phantom(&cfg).map_err(|e| CliError {
        code: 2,
        message: format!("invalid phantom configuration: {e}"),
    })?;
    let grid = resampled_geometry(phantom.volume.geometry(), [args.spacing; 3])?;
    let heatmaps = oracle_heatmaps(&phantom.keypoints(), &grid, args.heatmap_sigma)?;

    prepare_output(&args.output)?;
    write_volume(&args.output.join("volume.vg1"), &phantom.volume)?;
    write_volume(&args.output.join("heatmaps.vg1"), &heatmaps.to_volume())?;
    write_annotations(&args.output.join("gt.va1"), &phantom.annotations())?;
    let cuts = PipelineConfig::default().grading;
    let vertebrae: Vec<Value> = phantom
        .vertebrae
        .iter()
        .zip(phantom.annotations())
        .map(|(v, a)| {
            json!({
                "label": a.label,
                "heights_mm": v.heights,
                "G": v.genant,
                "grade": grade(v.genant, &cuts),
                "center_mm": [v.center.x, v.center.y, v.center.z],
            })
        })
        .collect();
    write_json(
        &args.output.join("phantom.json"),
        &json!({
            "phantom": cfg,
            "heatmap_spacing_mm": args.spacing,
            "heatmap_sigma_voxels": args.heatmap_sigma,
            "vertebrae": vertebrae,
        }),
    )?;
    Ok(0)
}

pub fn straighten(args: &StraightenArgs) -> CliResult {
    let cfg = resolve_config(&args.common)?;
    let vol = read_volume(&args.volume)?;
    let out = if let Some(path) = &args.heatmaps {
        let maps = read_volume(path)?;
        pipeline::straighten(&vol, CenterlineSource::Heatmaps(&maps), &cfg)?
    } else {
        let path = args.annotations.as_ref().expect("clap requires one centerline source");
        let kps = keypoints_of(path)?;
        pipeline::straighten(&vol, CenterlineSource::Annotations(&kps), &cfg)?
    };
    let dir = &args.common.output;
    prepare_output(dir)?;
    write_volume(&dir.join("working.vg1"), &out.working)?;
    write_volume(&dir.join("straightened.vg1"), &out.volume)?;
    write_volume(&dir.join("sagittal.vg1"), &out.image.to_volume())?;
    let file = TransformFile {
        config: cfg,
        transform: TransformRecord::from(out.transform()),
        centerline: out.centerline.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
    };
    write_json(&dir.join("transform.json"), &file)?;
    Ok(0)
}

fn weights_per_anchor(targets: &DetectionTargets) -> Vec<f64> {
    let mut w = vec![0.0; targets.n_anchors()];
    for p in targets.positives() {
        w[p.anchor] = p.genant;
    }
    w
}

#[derive(Serialize)]
struct PositiveOut {
    anchor: usize,
    col: usize,
    row: usize,
    slot: usize,
    gt: usize,
    iou: f64,
    forced: bool,
    #[serde(rename = "G")]
    genant: f64,
}

pub fn targets(args: &TargetsArgs) -> CliResult {
    let cfg = resolve_config(&args.common)?;
    if !(args.genant_scale > 0.0 && args.genant_scale.is_finite()) {
        return Err(input_error("--genant-scale must be positive"));
    }
    let image = load_image(&args.sagittal, &args.transform)?;
    let kps = keypoints_of(&args.annotations)?;
    let gt = pipeline::project_annotations(&kps, image.transform())?;
    let anchors = pipeline::anchor_grid(&image, &cfg)?;
    let targets = assign_targets(&anchors, &gt, cfg.detection.positive_iou)
        .map_err(|e| match e {
            Error::InvalidInput(m) => Error::ShapeMismatch(m),
            e => e,
        })?
        .with_genant(|g| gt[g].genant * args.genant_scale);

    let dir = &args.common.output;
    prepare_output(dir)?;
    let objectness: Vec<f64> = targets.objectness().iter().map(|&o| f64::from(o)).collect();
    let mut regression = vec![0.0; anchors.len() * ENCODED_LEN];
    for p in targets.positives() {
        regression[p.anchor * ENCODED_LEN..(p.anchor + 1) * ENCODED_LEN].copy_from_slice(&p.encoded.0);
    }
    write_volume(&dir.join("targets_objectness.vg1"), &objectness_to_volume(&anchors, &objectness)?)?;
    write_volume(&dir.join("targets_regression.vg1"), &regression_to_volume(&anchors, &regression)?)?;
    write_volume(
        &dir.join("targets_weights.vg1"),
        &objectness_to_volume(&anchors, &weights_per_anchor(&targets))?,
    )?;
    let positives: Vec<PositiveOut> = targets
        .positives()
        .iter()
        .map(|p| {
            let (col, row, slot) = anchors.position(p.anchor);
            PositiveOut {
                anchor: p.anchor,
                col,
                row,
                slot,
                gt: p.gt,
                iou: p.iou,
                forced: p.forced,
                genant: p.genant,
            }
        })
        .collect();
    write_json(
        &dir.join("targets.json"),
        &json!({
            "config": cfg,
            "genant_scale": args.genant_scale,
            "image_shape": [anchors.width(), anchors.height()],
            "anchors_per_position": anchors.per_position(),
            "n_anchors": anchors.len(),
            "n_positive": positives.len(),
            "positives": positives,
        }),
    )?;

    if args.loss {
        let (Some(obj), Some(reg)) = (&args.objectness, &args.regression) else {
            return Err(input_error("--loss needs --objectness and --regression"));
        };
        let pred = Predictions::new(
            objectness_from_volume(&anchors, &read_volume(obj)?)?,
            regression_from_volume(&anchors, &read_volume(reg)?)?,
        )?;
        let eps = cfg.detection.bce_epsilon;
        let loss = detection_loss(&pred, &targets, eps)?;
        let grad = detection_loss_grad(&pred, &targets, eps)?;
        println!(
            "loss {:.12e} objectness {:.12e} regression {:.12e} positives {}",
            loss.total, loss.objectness, loss.regression, loss.n_positive
        );
        write_volume(&dir.join("grad_objectness.vg1"), &objectness_to_volume(&anchors, &grad.objectness)?)?;
        write_volume(
            &dir.join("grad_objectness_logit.vg1"),
            &objectness_to_volume(&anchors, &grad.objectness_logit)?,
        )?;
        write_volume(&dir.join("grad_regression.vg1"), &regression_to_volume(&anchors, &grad.regression)?)?;
        write_json(
            &dir.join("loss.json"),
            &json!({ "config": cfg, "genant_scale": args.genant_scale, "loss": loss }),
        )?;
    }
    Ok(0)
}

fn detections_file(cfg: PipelineConfig, result: &ScoreResult) -> DetectionsFile {
    let p3 = |p: &Point3| [p.x, p.y, p.z];
    DetectionsFile {
        config: cfg,
        vertebrae: result
            .vertebrae
            .iter()
            .map(|v| VertebraOut {
                score: v.score,
                keypoints: v.keypoints.map(|p| [p.x, p.y]),
                keypoints_world: v.keypoints_world.points.each_ref().map(p3),
                heights: v.measurement.heights,
                genant: v.measurement.index,
                grade: v.measurement.grade,
            })
            .collect(),
        patient: result.patient.map(|(genant, grade)| PatientOut { genant, grade }),
    }
}

pub fn score(args: &ScoreArgs) -> CliResult {
    let cfg = resolve_config(&args.common)?;
    let image = load_image(&args.sagittal, &args.transform)?;
    let result = if let Some(path) = &args.annotations {
        pipeline::score_annotations(&keypoints_of(path)?, image.transform(), &cfg.grading)?
    } else {
        let (Some(obj), Some(reg)) = (&args.objectness, &args.regression) else {
            return Err(input_error("scoring needs --objectness and --regression, or --annotations"));
        };
        let anchors = pipeline::anchor_grid(&image, &cfg)?;
        let pred = Predictions::new(
            objectness_from_volume(&anchors, &read_volume(obj)?)?,
            regression_from_volume(&anchors, &read_volume(reg)?)?,
        )?;
        pipeline::score_predictions(&pred, &image, &cfg)?
    };
    prepare_output(&args.common.output)?;
    write_json(&args.common.output.join("detections.json"), &detections_file(cfg, &result))?;
    Ok(0)
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    let cfg = resolve_config(&args.common)?;
    if args.detections.len() != args.gt.len() {
        return Err(input_error(format!(
            "{} detection files but {} ground-truth files",
            args.detections.len(),
            args.gt.len()
        )));
    }
    let mut cases = Vec::with_capacity(args.gt.len());
    for (det_path, gt_path) in args.detections.iter().zip(&args.gt) {
        let file: DetectionsFile = read_json(det_path)?;
        let detections = file
            .vertebrae
            .iter()
            .map(|v| {
                let pts = v.keypoints_world.map(|p| Point3::new(p[0], p[1], p[2]));
                Ok(EvalVertebra {
                    score: v.score,
                    keypoints: VertebraKeypoints::new(pts)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        cases.push(EvalCase {
            detections,
            ground_truth: keypoints_of(gt_path)?,
        });
    }
    let report = run_evaluation(&cases, cfg.evaluation.match_iou, &cfg.grading)?;
    let dir = &args.common.output;
    prepare_output(dir)?;
    write_json(&dir.join("report.json"), &json!({ "config": cfg, "report": report }))?;
    fs::write(dir.join("report.txt"), report.to_table())
        .map_err(|e| input_error(format!("{}: {e}", dir.join("report.txt").display())))?;
    print!("{}", report.to_table());
    if report.has_undefined_vertebra_metric() {
        eprintln!("error: undefined metrics: {}", report.undefined.join("; "));
        return Ok(4);
    }
    Ok(0)
}
