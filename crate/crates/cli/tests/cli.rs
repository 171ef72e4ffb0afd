//! End-to-end runs of the `dhp` binary on a tiny synthetic video.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dhp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dhp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = r#"{
  "video_id": "tiny", "width": 64, "height": 32, "frames": 6,
  "blobs": [{"start": [20.0, 0.0], "motion": {"kind": "linear", "bearing_deg": 90.0, "speed_deg": 3.0}}],
  "subjects": 3, "pursuit_gain": 0.5, "max_step_deg": 8.0, "noise_dir_deg": 5.0, "noise_mag_deg": 0.2
}"#;

const CONFIG: &str = r#"{
  "version": 1,
  "train": {"episodes": 2, "seed": 3},
  "offline": {"workflows": 3, "map_width": 64, "map_height": 32},
  "online": {"episodes": 2, "mo_width": 32, "mo_height": 16}
}"#;

struct World {
    _dir: tempfile::TempDir,
    root: PathBuf,
    video: PathBuf,
    config: PathBuf,
}

impl World {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    fs::write(root.join("spec.json"), SPEC).unwrap();
    fs::write(root.join("cfg.json"), CONFIG).unwrap();
    let video = root.join("video");
    ok(&["gen-synth", "--spec", s(&root.join("spec.json")), "--out", s(&video), "--seed", "5"]);
    let config = root.join("cfg.json");
    World { _dir: dir, root, video, config }
}

#[test]
fn offline_pipeline_produces_one_report_entry_per_video() {
    let w = world();
    let traces = w.video.join("traces.csv");
    let ckpt = w.path("net.bin");
    ok(&["train-offline", "--data", s(&w.video), "--config", s(&w.config), "--out", s(&ckpt), "--workers", "1"]);
    let log = fs::read_to_string(w.path("net.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let maps = w.path("maps");
    ok(&["predict-offline", "--video", s(&w.video), "--ckpt", s(&ckpt), "--config", s(&w.config), "--out", s(&maps)]);
    assert_eq!(fs::read_dir(&maps).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "f32").count(), 6);

    let gt = w.path("gt");
    ok(&["gt-maps", "--traces", s(&traces), "--config", s(&w.config), "--out", s(&gt)]);
    let fcb = w.path("fcb.json");
    ok(&["fit-fcb", "--pred", s(&maps), "--gt", s(&gt), "--out", s(&fcb)]);
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fcb).unwrap()).unwrap();
    let w1 = fit["w1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&w1));

    for extra in [vec![], vec!["--fcb", s(&fcb)]] {
        let report = w.path("report.json");
        let mut args = vec!["evaluate", "--maps", s(&maps), "--traces", s(&traces), "--out", s(&report)];
        args.extend(extra);
        ok(&args);
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        let entries = r.as_object().unwrap();
        assert_eq!(entries.len(), 1);
        assert!(entries["tiny"]["nss"].as_f64().unwrap().is_finite());
    }

    let pgm = w.path("m.pgm");
    ok(&["render", "--map", s(&maps.join("map_000003.f32")), "--out", s(&pgm)]);
    assert!(fs::read(&pgm).unwrap().starts_with(b"P5\n64 32\n255\n"));
}

#[test]
fn predict_offline_is_repeatable_for_a_seed() {
    let w = world();
    let ckpt = w.path("net.bin");
    ok(&["train-supervised", "--data", s(&w.video), "--config", s(&w.config), "--out", s(&ckpt)]);
    let run = |name: &str, seed: &str| {
        let out = w.path(name);
        ok(&["predict-offline", "--video", s(&w.video), "--ckpt", s(&ckpt), "--config", s(&w.config), "--seed", seed, "--out", s(&out)]);
        fs::read(out.join("map_000005.f32")).unwrap()
    };
    assert_eq!(run("a", "9"), run("b", "9"));
}

#[test]
fn online_prediction_and_mo() {
    let w = world();
    let traces = w.video.join("traces.csv");
    let pred = w.path("pred.csv");
    let stdout = ok(&[
        "predict-online", "--video", s(&w.video), "--trace", s(&traces), "--config", s(&w.config),
        "--no-offline-init", "--subject", "s01", "--out", s(&pred),
    ]);
    assert!(stdout.contains("tiny s01 mean_mo="));
    let text = fs::read_to_string(&pred).unwrap();
    assert!(text.starts_with("video_id,subject_id,frame,pred_lon_deg,pred_lat_deg,mo"));
    assert_eq!(text.lines().count(), 1 + 5);

    let report = w.path("mo.json");
    let stdout = ok(&["evaluate-mo", "--pred", s(&pred), "--trace", s(&traces), "--out", s(&report)]);
    assert!(stdout.starts_with("mean_mo="));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let mo = r["mean_mo"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mo));
    assert_eq!(r["frames"].as_u64(), Some(5));
}

#[test]
fn online_with_offline_init_needs_a_checkpoint() {
    let w = world();
    let out = dhp(&["predict-online", "--video", s(&w.video), "--trace", s(&w.video.join("traces.csv")), "--out", s(&w.path("p.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn derive_scanpaths_writes_one_row_per_step() {
    let w = world();
    let out = w.path("steps.csv");
    ok(&["derive-scanpaths", "--traces", s(&w.video.join("traces.csv")), "--out", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("video_id,subject_id,frame,dir_deg,mag_deg"));
    assert_eq!(text.lines().count(), 1 + 3 * 5);
}

#[test]
fn gradcheck_passes() {
    let out = dhp(&["gradcheck", "--seed", "1", "--per-tensor", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn input_errors_exit_2() {
    let w = world();
    let missing = w.path("nope");
    assert_eq!(dhp(&["render", "--map", s(&missing), "--out", s(&w.path("x.pgm"))]).status.code(), Some(2));
    assert_eq!(dhp(&["not-a-command"]).status.code(), Some(2));

    fs::write(w.path("typo.json"), r#"{"train": {"gama": 0.9}}"#).unwrap();
    let out = dhp(&["train-offline", "--data", s(&w.video), "--config", s(&w.path("typo.json")), "--out", s(&w.path("n.bin"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));

    fs::write(w.path("bad.bin"), b"garbage").unwrap();
    let out = dhp(&["predict-offline", "--video", s(&w.video), "--ckpt", s(&w.path("bad.bin")), "--out", s(&w.path("m"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_3() {
    // a constant map has no defined NSS
    let w = world();
    let maps = w.path("flat");
    fs::create_dir_all(&maps).unwrap();
    for i in 0..6 {
        let name = format!("map_{i:06}");
        fs::write(maps.join(format!("{name}.f32")), vec![0u8; 64 * 32 * 4]).unwrap();
        fs::write(maps.join(format!("{name}.json")), r#"{"width": 64, "height": 32}"#).unwrap();
    }
    let out = dhp(&["evaluate", "--maps", s(&maps), "--traces", s(&w.video.join("traces.csv")), "--out", s(&w.path("r.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
