use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use vfq_core::geometry::Point3;
use vfq_core::io::{read_volume, write_volume};
use vfq_core::volume::Volume3D;

fn vfq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfq")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small straight phantom on a 1 mm grid whose centerline sits on voxel centers.
fn small_phantom_config(extra: Value) -> Value {
    let mut cfg = json!({
        "shape": [65, 65, 181],
        "spacing": [1.0, 1.0, 1.0],
        "n_vertebrae": 6,
        "scoliosis_amplitude_mm": 0.0,
        "seed": 4,
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    cfg
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

struct Run {
    _tmp: TempDir,
    root: PathBuf,
}

impl Run {
    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn phantom_and_straighten(extra: Value) -> Run {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().to_path_buf();
    let cfg = write_config(&root, "phantom_cfg.json", &small_phantom_config(extra));
    let p = root.join("p");
    let out = vfq(&["phantom", "--config", s(&cfg), "--output", s(&p)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let st = root.join("s");
    let out = vfq(&[
        "straighten",
        "--volume",
        s(&p.join("volume.vg1")),
        "--heatmaps",
        s(&p.join("heatmaps.vg1")),
        "--output",
        s(&st),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    Run { _tmp: tmp, root }
}

fn targets(run: &Run, out_dir: &str, extra: &[&str]) -> Output {
    let st = run.dir("s");
    let mut args = vec![
        "targets".to_string(),
        "--sagittal".into(),
        s(&st.join("sagittal.vg1")).into(),
        "--transform".into(),
        s(&st.join("transform.json")).into(),
        "--annotations".into(),
        s(&run.dir("p").join("gt.va1")).into(),
        "--output".into(),
        s(&run.dir(out_dir)).into(),
    ];
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    vfq(&refs)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn compose_phantom_to_report() {
    let run = phantom_and_straighten(json!({ "scoliosis_amplitude_mm": 8.0 }));
    let out = targets(&run, "t", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let st = run.dir("s");
    let t = run.dir("t");
    let out = vfq(&[
        "score",
        "--sagittal",
        s(&st.join("sagittal.vg1")),
        "--transform",
        s(&st.join("transform.json")),
        "--objectness",
        s(&t.join("targets_objectness.vg1")),
        "--regression",
        s(&t.join("targets_regression.vg1")),
        "--output",
        s(&run.dir("d")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dets = read_json(&run.dir("d").join("detections.json"));
    assert_eq!(dets["vertebrae"].as_array().unwrap().len(), 6);

    let out = vfq(&[
        "evaluate",
        "--detections",
        s(&run.dir("d").join("detections.json")),
        "--gt",
        s(&run.dir("p").join("gt.va1")),
        "--output",
        s(&run.dir("e")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&run.dir("e").join("report.json"));
    assert_eq!(report["report"]["detection"]["recall"], json!(1.0));
    assert!(report["report"]["localization"]["mean_mm"].as_f64().unwrap() < 1.0);
    let table = fs::read_to_string(run.dir("e").join("report.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);

    // Grading the annotations directly gives the same G per vertebra.
    let out = vfq(&[
        "score",
        "--sagittal",
        s(&st.join("sagittal.vg1")),
        "--transform",
        s(&st.join("transform.json")),
        "--annotations",
        s(&run.dir("p").join("gt.va1")),
        "--output",
        s(&run.dir("a")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ann = read_json(&run.dir("a").join("detections.json"));
    for (x, y) in dets["vertebrae"].as_array().unwrap().iter().zip(ann["vertebrae"].as_array().unwrap()) {
        assert!((x["G"].as_f64().unwrap() - y["G"].as_f64().unwrap()).abs() < 0.02);
    }
}

#[test]
fn missing_file_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.vg1");
    let out = vfq(&[
        "straighten",
        "--volume",
        s(&missing),
        "--heatmaps",
        s(&missing),
        "--output",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.vg1"), "{}", stderr(&out));
}

#[test]
fn malformed_config_is_input_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", &json!({ "working_spacing_mm": 3.0, "bogus": 1 }));
    let missing = tmp.path().join("v.vg1");
    let out = vfq(&["straighten", "--volume", s(&missing), "--heatmaps", s(&missing), "--config", s(&cfg)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn overlapping_phantom_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "overlap.json",
        &small_phantom_config(json!({ "pitch_mm": 10.0, "base_height_mm": [19.0, 23.0] })),
    );
    let out = vfq(&["phantom", "--config", s(&cfg), "--output", s(&tmp.path().join("p"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!tmp.path().join("p").join("volume.vg1").exists());
}

#[test]
fn empty_heatmaps_are_a_geometry_error() {
    let run = phantom_and_straighten(json!({}));
    let maps = read_volume(&run.dir("p").join("heatmaps.vg1")).unwrap();
    let zero = Volume3D::filled(*maps.geometry(), 0.0);
    let path = run.dir("zero.vg1");
    write_volume(&path, &zero).unwrap();
    let out = vfq(&[
        "straighten",
        "--volume",
        s(&run.dir("p").join("volume.vg1")),
        "--heatmaps",
        s(&path),
        "--output",
        s(&run.dir("z")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn sagittal_transform_mismatch_is_a_geometry_error() {
    let run = phantom_and_straighten(json!({}));
    let sag = read_volume(&run.dir("s").join("sagittal.vg1")).unwrap();
    let [w, h, d] = sag.shape();
    let geometry = vfq_core::volume::VolumeGeometry::new([w, h - 3, d], sag.spacing(), sag.origin()).unwrap();
    let short = Volume3D::filled(geometry, 0.0);
    let path = run.dir("short.vg1");
    write_volume(&path, &short).unwrap();
    let out = vfq(&[
        "score",
        "--sagittal",
        s(&path),
        "--transform",
        s(&run.dir("s").join("transform.json")),
        "--annotations",
        s(&run.dir("p").join("gt.va1")),
        "--output",
        s(&run.dir("d")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn no_fractures_leaves_auc_undefined() {
    let run = phantom_and_straighten(json!({ "heights_mm": vec![[20.0, 20.0, 20.0]; 6] }));
    let st = run.dir("s");
    let out = vfq(&[
        "score",
        "--sagittal",
        s(&st.join("sagittal.vg1")),
        "--transform",
        s(&st.join("transform.json")),
        "--annotations",
        s(&run.dir("p").join("gt.va1")),
        "--output",
        s(&run.dir("d")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = vfq(&[
        "evaluate",
        "--detections",
        s(&run.dir("d").join("detections.json")),
        "--gt",
        s(&run.dir("p").join("gt.va1")),
        "--output",
        s(&run.dir("e")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let report = read_json(&run.dir("e").join("report.json"));
    for b in report["report"]["vertebra"]["thresholds"].as_array().unwrap() {
        assert_eq!(b["roc_auc"], Value::Null);
    }
}

#[test]
fn targets_as_predictions_reach_the_loss_floor() {
    let run = phantom_and_straighten(json!({}));
    let t = run.dir("t");
    assert_eq!(code(&targets(&run, "t", &[])), 0);
    let out = targets(
        &run,
        "t",
        &[
            "--loss",
            "--objectness",
            s(&t.join("targets_objectness.vg1")),
            "--regression",
            s(&t.join("targets_regression.vg1")),
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("loss "));
    let loss = &read_json(&t.join("loss.json"))["loss"];
    let floor = -(1.0f64 - 1e-7).ln();
    assert!((loss["objectness"].as_f64().unwrap() - floor).abs() < 1e-12);
    // Only f32 storage of the encoded targets remains.
    assert!(loss["regression"].as_f64().unwrap() < 1e-6);
    for name in ["grad_objectness", "grad_objectness_logit", "grad_regression"] {
        assert!(t.join(format!("{name}.vg1")).exists());
    }
}

#[test]
fn halving_genant_doubles_regression_loss() {
    let run = phantom_and_straighten(json!({}));
    let t = run.dir("t");
    assert_eq!(code(&targets(&run, "t", &[])), 0);
    let reg = read_volume(&t.join("targets_regression.vg1")).unwrap();
    let mut noisy = reg.clone();
    for (n, v) in noisy.data_mut().iter_mut().enumerate() {
        *v += 0.01 * ((n * 7919 % 101) as f32 - 50.0) / 50.0;
    }
    let pred = run.dir("noisy.vg1");
    write_volume(&pred, &noisy).unwrap();
    let loss_for = |dir: &str, scale: &str| {
        let out = targets(
            &run,
            dir,
            &[
                "--loss",
                "--objectness",
                s(&t.join("targets_objectness.vg1")),
                "--regression",
                s(&pred),
                "--genant-scale",
                scale,
            ],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        read_json(&run.dir(dir).join("loss.json"))["loss"].clone()
    };
    let full = loss_for("l1", "1");
    let half = loss_for("l2", "0.5");
    let r1 = full["regression"].as_f64().unwrap();
    assert!(r1 > 0.0);
    assert_eq!(half["regression"].as_f64().unwrap(), 2.0 * r1);
    assert_eq!(half["objectness"], full["objectness"]);
}

#[test]
fn straight_phantom_sagittal_matches_central_plane() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let cfg = write_config(root, "cfg.json", &small_phantom_config(json!({})));
    let p = root.join("p");
    assert_eq!(code(&vfq(&["phantom", "--config", s(&cfg), "--output", s(&p)])), 0);
    let st = root.join("s");
    let out = vfq(&[
        "straighten",
        "--volume",
        s(&p.join("volume.vg1")),
        "--annotations",
        s(&p.join("gt.va1")),
        "--output",
        s(&st),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let vol = read_volume(&p.join("volume.vg1")).unwrap();
    let sag = read_volume(&st.join("sagittal.vg1")).unwrap();
    let tf = read_json(&st.join("transform.json"));
    let rows = tf["transform"]["rows"].as_array().unwrap();
    let ap_half = tf["transform"]["ap_half"].as_u64().unwrap() as f64;
    let [w, h, _] = sag.shape();
    assert_eq!(h, rows.len());
    let mut checked = 0;
    for (k, row) in rows.iter().enumerate() {
        let c = &row["c"];
        let z = c[2].as_f64().unwrap();
        assert!((c[0].as_f64().unwrap() - 32.0).abs() < 1e-9);
        assert!((c[1].as_f64().unwrap() - 32.0).abs() < 1e-9);
        for j in 0..w {
            let p = Point3::new(32.0, 32.0 + (j as f64 - ap_half), z);
            let expected = vol.trilinear_sample(p, -1024.0);
            assert!((sag.get(j, k, 0) as f64 - expected).abs() <= 1e-5, "row {k} col {j}");
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn echoed_config_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let cfg = write_config(root, "cfg.json", &small_phantom_config(json!({})));
    let p = root.join("p");
    assert_eq!(code(&vfq(&["phantom", "--config", s(&cfg), "--output", s(&p)])), 0);
    let volume = p.join("volume.vg1");
    let heatmaps = p.join("heatmaps.vg1");
    let straighten = |out: &Path, extra: &[&str]| {
        let mut args = vec![
            "straighten",
            "--volume",
            s(&volume),
            "--heatmaps",
            s(&heatmaps),
            "--output",
            s(out),
        ];
        args.extend_from_slice(extra);
        let o = vfq(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let a = root.join("a");
    let b = root.join("b");
    straighten(&a, &["--delta", "1.5", "--spacing", "2.5", "--mild-cut", "0.82"]);
    let tf = a.join("transform.json");
    straighten(&b, &["--config", s(&tf)]);
    for name in ["transform.json", "working.vg1", "working.raw", "sagittal.raw", "straightened.raw"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let echoed = read_json(&tf)["config"].clone();
    assert_eq!(echoed["straighten"]["delta"], json!(1.5));
    assert_eq!(echoed["grading"]["mild"], json!(0.82));

    // The phantom echo regenerates the same phantom.
    let again = root.join("p2");
    let o = vfq(&["phantom", "--config", s(&p.join("phantom.json")), "--output", s(&again)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["volume.raw", "heatmaps.raw", "gt.va1", "phantom.json"] {
        assert_eq!(fs::read(p.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&vfq(&["straighten"])), 2);
    assert_eq!(code(&vfq(&["frobnicate"])), 2);
}

#[test]
fn zero_detections_give_empty_list() {
    let run = phantom_and_straighten(json!({}));
    assert_eq!(code(&targets(&run, "t", &[])), 0);
    let t = run.dir("t");
    let obj = read_volume(&t.join("targets_objectness.vg1")).unwrap();
    let silent = run.dir("silent.vg1");
    write_volume(&silent, &Volume3D::filled(*obj.geometry(), 0.0)).unwrap();
    let st = run.dir("s");
    let out = vfq(&[
        "score",
        "--sagittal",
        s(&st.join("sagittal.vg1")),
        "--transform",
        s(&st.join("transform.json")),
        "--objectness",
        s(&silent),
        "--regression",
        s(&t.join("targets_regression.vg1")),
        "--output",
        s(&run.dir("d")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dets = read_json(&run.dir("d").join("detections.json"));
    assert_eq!(dets["vertebrae"], json!([]));
    assert_eq!(dets["patient"], Value::Null);
    assert!(dets["config"].is_object());
}
