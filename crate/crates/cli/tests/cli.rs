use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gwtrack_core::params::{init_params, with_meta};
use gwtrack_core::ModelConfig;
use gwtrack_data::{read_all, read_results, write_results, TrackRecord};

fn gwtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwtrack")).args(args).env_remove("GWTRACK_THREADS").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny dataset: 3 sequences of 8 frames, one of them in the test split.
fn dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(gwtrack(&["synth", "--preset", "tiny", "--sequences", "3", "--frames", "8", "--seed", "2", "--out", p(&data)]));
    data
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((e.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn synth_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    let a = dataset(t.path());
    let b = t.path().join("again");
    ok(gwtrack(&["synth", "--preset", "tiny", "--sequences", "3", "--frames", "8", "--seed", "2", "--out", p(&b)]));
    assert_eq!(read_all(&a).unwrap().len(), 3);
    assert_eq!(files(&a), files(&b));
}

#[test]
fn missing_out_is_a_usage_error() {
    let o = gwtrack(&["synth", "--preset", "tiny"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn invalid_thread_cap_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_gwtrack"))
        .args(["synth", "--preset", "tiny", "--out", "/nonexistent/x"])
        .env("GWTRACK_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_step_training_saves_the_initialization() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let ck = t.path().join("init.gwt");
    ok(gwtrack(&["train", "--data", p(&data), "--out", p(&ck), "--steps", "0", "--seed", "4"]));
    let cfg = ModelConfig::default();
    let expected = with_meta(init_params(&cfg, 4).unwrap(), &cfg).to_bytes();
    assert_eq!(fs::read(&ck).unwrap(), expected);
}

#[test]
fn single_thread_training_is_reproducible_and_config_is_overridden() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let conf = t.path().join("train.conf");
    fs::write(&conf, "# test config\nsteps=5\nbatch=2\nseed=3\n").unwrap();
    let run = |name: &str| {
        let ck = t.path().join(name);
        ok(gwtrack(&["--single-thread", "--config", p(&conf), "train", "--data", p(&data), "--out", p(&ck), "--steps", "2"]));
        (fs::read(&ck).unwrap(), fs::read_to_string(t.path().join(format!("{}.loss.csv", name))).unwrap())
    };
    let (ck_a, csv_a) = run("a.gwt");
    let (ck_b, csv_b) = run("b.gwt");
    assert_eq!(ck_a, ck_b);
    assert_eq!(csv_a, csv_b);
    // header plus the two steps from the explicit flag, not five from the file
    assert_eq!(csv_a.lines().count(), 3);
    assert!(csv_a.starts_with("step,lr,loss_total,loss_loc,loss_cls,loss_reg"));
}

#[test]
fn huge_learning_rate_diverges() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let ck = t.path().join("x.gwt");
    let o = gwtrack(&["train", "--data", p(&data), "--out", p(&ck), "--steps", "6", "--batch", "1", "--lr", "1e30"]);
    assert_eq!(code(&o), 3, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn tracking_emits_one_line_per_frame_and_policies_differ() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let ck = t.path().join("init.gwt");
    ok(gwtrack(&["train", "--data", p(&data), "--out", p(&ck), "--steps", "0"]));
    let test = read_all(&data).unwrap().into_iter().find(|d| d.meta.split == gwtrack_data::Split::Test).unwrap();
    let run = |policy: &str| {
        let out = t.path().join(format!("{}.jsonl", policy));
        ok(gwtrack(&["track", "--data", p(&data), "--ckpt", p(&ck), "--seq", test.id(), "--policy", policy, "--out", p(&out)]));
        read_results(&out).unwrap()
    };
    let fixed = run("fixed");
    let refresh = run("refresh");
    assert_eq!(fixed.len(), test.len());
    let boxes = |v: &[TrackRecord]| v.iter().map(|r| (r.cx, r.cy, r.w, r.h)).collect::<Vec<_>>();
    assert_ne!(boxes(&fixed), boxes(&refresh));
    // without --seq every test sequence goes to a directory
    let dir = t.path().join("all");
    ok(gwtrack(&["track", "--data", p(&data), "--ckpt", p(&ck), "--out", p(&dir)]));
    assert!(dir.join(format!("{}.jsonl", test.id())).is_file());
}

#[test]
fn checkpoint_failures_exit_with_code_4() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let bad = t.path().join("bad.gwt");
    fs::write(&bad, b"NOPE and some more bytes").unwrap();
    let out = t.path().join("r.jsonl");
    assert_eq!(code(&gwtrack(&["track", "--data", p(&data), "--ckpt", p(&bad), "--out", p(&out)])), 4);
    // a checkpoint without architecture metadata
    let bare = t.path().join("bare.gwt");
    init_params(&ModelConfig::default(), 0).unwrap().save(&bare).unwrap();
    assert_eq!(code(&gwtrack(&["track", "--data", p(&data), "--ckpt", p(&bare), "--out", p(&out)])), 4);
    let missing = t.path().join("missing.gwt");
    assert_eq!(code(&gwtrack(&["track", "--data", p(&data), "--ckpt", p(&missing), "--out", p(&out)])), 1);
}

#[test]
fn baselines_share_the_schema() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let seqs = read_all(&data).unwrap();
    let id = seqs[0].id();
    let mut lens = Vec::new();
    for f in ["kf", "ekf", "ukf", "pf"] {
        let out = t.path().join(format!("{}.jsonl", f));
        ok(gwtrack(&["baseline", "--data", p(&data), "--filter", f, "--seq", id, "--particles", "200", "--out", p(&out)]));
        lens.push(read_results(&out).unwrap().len());
    }
    assert!(lens.iter().all(|&n| n == seqs[0].len()));
    let pf = |name: &str| {
        let out = t.path().join(name);
        ok(gwtrack(&["baseline", "--data", p(&data), "--filter", "pf", "--seq", id, "--seed", "8", "--out", p(&out)]));
        read_results(&out).unwrap().iter().map(|r| (r.cx, r.cy)).collect::<Vec<_>>()
    };
    assert_eq!(pf("p1.jsonl"), pf("p2.jsonl"));
    let o = gwtrack(&["baseline", "--data", p(&data), "--filter", "lms", "--out", "x.jsonl"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn noiseless_kalman_converges_on_the_track() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let seqs = read_all(&data).unwrap();
    let out = t.path().join("kf.jsonl");
    ok(gwtrack(&[
        "baseline", "--data", p(&data), "--filter", "kf", "--seq", seqs[0].id(), "--noise-sigma", "0", "--accel-var", "1",
        "--meas-sigma", "0.05", "--out", p(&out),
    ]));
    let recs = read_results(&out).unwrap();
    let last = recs.last().unwrap();
    let gt = seqs[0].annotations.last().unwrap().bbox;
    assert!((last.cx - gt.cx).hypot(last.cy - gt.cy) < 0.1, "{:?} vs {:?}", last, gt);
}

#[test]
fn eval_reports_rows_overlays_and_alignment() {
    let t = tempfile::tempdir().unwrap();
    let data = dataset(t.path());
    let seqs = read_all(&data).unwrap();
    let ds = &seqs[0];
    let perfect = t.path().join(format!("{}.jsonl", ds.id()));
    let recs: Vec<TrackRecord> = ds.annotations.iter().map(|a| TrackRecord::new(a.frame, &a.bbox.translate(1.0, 0.0), 1.0, 5.0)).collect();
    write_results(&perfect, &ds.annotations.iter().map(|a| TrackRecord::new(a.frame, &a.bbox, 1.0, 5.0)).collect::<Vec<_>>()).unwrap();
    let shifted = t.path().join("shifted.jsonl");
    write_results(&shifted, &recs).unwrap();
    let report = t.path().join("report.json");
    let overlay = t.path().join("overlay");
    let o = ok(gwtrack(&[
        "eval", "--data", p(&data), "--results", &format!("ours={}", p(&perfect)), &format!("kf={}", p(&shifted)), "--seq", ds.id(),
        "--out", p(&report), "--overlay", p(&overlay),
    ]));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["iou"].as_f64(), Some(1.0));
    assert!(rows[1]["iou"].is_null());
    assert!((rows[1]["mean_err_mm"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);
    assert!(t.path().join("report.csv").is_file() && t.path().join("report_curves.csv").is_file());
    assert!(image_has_colors(&overlay.join("kf").join(ds.id()).join("00003.png")));

    let mut short = recs.clone();
    short.remove(2);
    let broken = t.path().join("broken.jsonl");
    write_results(&broken, &short).unwrap();
    let o = gwtrack(&["eval", "--data", p(&data), "--results", p(&broken), "--seq", ds.id(), "--out", p(&report)]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing frames [2]"));
}

fn image_has_colors(path: &Path) -> bool {
    let img = image::open(path).unwrap().to_rgb8();
    let px: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    px.contains(&[255, 140, 0]) && px.contains(&[0, 200, 0])
}
