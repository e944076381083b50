use vfq_core::config::PipelineConfig;
use vfq_core::detection::{detect, AnchorGrid};
use vfq_core::eval::{evaluate, EvalCase, ScoredVertebra as EvalVertebra};
use vfq_core::genant::{grade, GradeThresholds};
use vfq_core::localization::{centerline_mae, centerline_target};
use vfq_core::phantom::{generate_phantom, oracle_heatmaps, oracle_predictions, PhantomConfig};
use vfq_core::pipeline::{anchor_grid, project_annotations, score_annotations, score_detections, straighten, CenterlineSource};
use vfq_core::volume::resampled_geometry;

fn run(amplitude: f64, seed: u64) {
    let cfg = PipelineConfig::default();
    let phantom = generate_phantom(&PhantomConfig {
        scoliosis_amplitude_mm: amplitude,
        seed,
        ..PhantomConfig::default()
    })
    .unwrap();
    let kps = phantom.keypoints();
    let grid = resampled_geometry(phantom.volume.geometry(), [cfg.working_spacing_mm; 3]).unwrap();
    let heatmaps = oracle_heatmaps(&kps, &grid, 2.0).unwrap().to_volume();
    let st = straighten(&phantom.volume, CenterlineSource::Heatmaps(&heatmaps), &cfg).unwrap();

    let target = centerline_target(&kps, &grid).unwrap();
    let mae = centerline_mae(&st.centerline, &target).unwrap();
    assert!(mae < 0.1, "centerline MAE {mae}");

    let gt = project_annotations(&kps, st.transform()).unwrap();
    let anchors: AnchorGrid = anchor_grid(&st.image, &cfg).unwrap();
    let pred = oracle_predictions(&gt, &anchors, cfg.detection.positive_iou).unwrap();
    let dets = detect(&pred, &anchors, 0.5, 0.45).unwrap();
    assert_eq!(dets.len(), kps.len());
    for g in &gt {
        let best = dets
            .iter()
            .map(|d| d.keypoints.iter().zip(&g.keypoints).map(|(a, b)| a.distance(b)).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "keypoint error {best} px");
    }

    let cuts = GradeThresholds::default();
    let scored = score_detections(&dets, st.transform(), &cuts).unwrap();
    for (v, s) in phantom.vertebrae.iter().zip(&scored.vertebrae) {
        let dg = (v.genant - s.measurement.index).abs();
        assert!(dg < 0.02, "planted {} recovered {}", v.genant, s.measurement.index);
        assert_eq!(grade(v.genant, &cuts), s.measurement.grade);
    }
    let min_g = phantom.vertebrae.iter().map(|v| v.genant).fold(1.0, f64::min);
    assert!((scored.patient.unwrap().0 - min_g).abs() < 0.02);

    let bypass = score_annotations(&kps, st.transform(), &cuts).unwrap();
    assert_eq!(bypass.vertebrae.len(), kps.len());

    let case = EvalCase {
        detections: scored
            .vertebrae
            .iter()
            .map(|v| EvalVertebra { score: v.score, keypoints: v.keypoints_world })
            .collect(),
        ground_truth: kps.clone(),
    };
    let report = evaluate(&[case], cfg.evaluation.match_iou, &cuts).unwrap();
    assert_eq!(report.detection.recall, Some(1.0));
    assert_eq!(report.detection.precision, Some(1.0));
    assert!(report.localization.mean_mm.unwrap() < 1.0);
    for b in &report.vertebra.as_ref().unwrap().thresholds {
        assert_eq!(b.roc_auc, Some(1.0));
    }
}

#[test]
fn straight_phantom_end_to_end() {
    run(0.0, 1);
}

#[test]
fn scoliotic_phantom_end_to_end() {
    run(30.0, 2);
}

#[test]
fn annotation_centerline_matches_heatmap_centerline() {
    let cfg = PipelineConfig::default();
    let phantom = generate_phantom(&PhantomConfig { seed: 5, ..PhantomConfig::default() }).unwrap();
    let kps = phantom.keypoints();
    let grid = resampled_geometry(phantom.volume.geometry(), [3.0; 3]).unwrap();
    let heatmaps = oracle_heatmaps(&kps, &grid, 2.0).unwrap().to_volume();
    let a = straighten(&phantom.volume, CenterlineSource::Heatmaps(&heatmaps), &cfg).unwrap();
    let b = straighten(&phantom.volume, CenterlineSource::Annotations(&kps), &cfg).unwrap();
    assert_eq!(a.image.height(), b.image.height());
    let d = a
        .curve
        .samples()
        .iter()
        .zip(b.curve.samples())
        .map(|(p, q)| (p.position - q.position).norm())
        .fold(0.0, f64::max);
    assert!(d < 0.05, "{d}");
}
