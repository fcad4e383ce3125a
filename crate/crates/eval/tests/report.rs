use gwtrack_baselines::{run_filter, FilterConfig, FilterKind};
use gwtrack_data::{generate, SequenceDataset, SynthConfig, TrackRecord};
use gwtrack_eval::metrics::Summary;
use gwtrack_eval::report::{ablation_csv, curves_csv, read_report_json, summary_csv, write_report_json};
use gwtrack_eval::*;

fn datasets() -> Vec<SequenceDataset> {
    generate(&SynthConfig::tiny(3, 2, 12)).unwrap().into_iter().map(|g| g.dataset).collect()
}

fn perfect(ds: &SequenceDataset) -> Vec<TrackRecord> {
    ds.annotations.iter().map(|a| TrackRecord::new(a.frame, &a.bbox, 1.0, 10.0)).collect()
}

fn shifted(ds: &SequenceDataset, dx: f64) -> Vec<TrackRecord> {
    ds.annotations.iter().map(|a| TrackRecord::new(a.frame, &a.bbox.translate(dx * a.frame as f64, 0.0), 0.5, 20.0)).collect()
}

#[test]
fn perfect_predictions() {
    let ds = datasets();
    let res = MethodResults::new("ours", ds.iter().map(|d| (d.id().to_string(), perfect(d))).collect());
    let r = evaluate(&res, &ds).unwrap();
    assert_eq!((r.mean_err_mm, r.max_mm, r.iou), (0.0, 0.0, Some(1.0)));
    assert!((r.fps.unwrap() - 100.0).abs() < 1e-9);
    assert_eq!(r.per_frame.len(), ds.iter().map(|d| d.len() - 1).sum::<usize>());
}

#[test]
fn aggregates_recompute_from_per_frame() {
    let ds = datasets();
    let res = MethodResults::new("drift", ds.iter().map(|d| (d.id().to_string(), shifted(d, 0.7))).collect());
    let r = evaluate(&res, &ds).unwrap();
    let errs: Vec<f64> = r.per_frame.iter().map(|f| f.err_mm).collect();
    let s = Summary::of(&errs).unwrap();
    assert_eq!((s.mean, s.std, s.min, s.max), (r.mean_err_mm, r.std_mm, r.min_mm, r.max_mm));
    let ious: Vec<f64> = r.per_frame.iter().map(|f| f.iou.unwrap()).collect();
    assert_eq!(r.iou.unwrap(), ious.iter().sum::<f64>() / ious.len() as f64);
    // frame k is off by 0.7k px at 0.3 mm/px
    let f = &r.per_frame[3];
    assert!((f.err_mm - 0.7 * f.frame as f64 * 0.3).abs() < 1e-9);
}

#[test]
fn evaluation_is_pure() {
    let ds = datasets();
    let res = MethodResults::new("drift", vec![(ds[0].id().to_string(), shifted(&ds[0], 0.3))]);
    assert_eq!(evaluate(&res, &ds).unwrap(), evaluate(&res, &ds).unwrap());
}

#[test]
fn misaligned_frames_are_listed() {
    let ds = datasets();
    let mut recs = perfect(&ds[0]);
    recs.remove(4);
    recs.push(TrackRecord { frame: 99, ..recs[0] });
    let res = MethodResults::new("ours", vec![(ds[0].id().to_string(), recs)]);
    match evaluate(&res, &ds) {
        Err(EvalError::Alignment { missing, extra, .. }) => assert_eq!((missing, extra), (vec![4], vec![99])),
        other => panic!("expected alignment error, got {:?}", other),
    }
}

#[test]
fn center_only_methods_have_null_iou() {
    let ds = datasets();
    let recs = run_filter(FilterKind::Kf, &ds[0], 0.0, &FilterConfig::constant_velocity(0.5, 0.5, 10), 1).unwrap();
    let r = evaluate(&MethodResults::new("kf", vec![(ds[0].id().to_string(), recs)]), &ds).unwrap();
    assert_eq!(r.iou, None);
    assert!(r.per_frame.iter().all(|f| f.iou.is_none()));
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["iou"].is_null());
    for key in ["method", "mean_err_mm", "std_mm", "min_mm", "max_mm", "fps", "per_frame"] {
        assert!(json.get(key).is_some(), "missing {}", key);
    }
}

#[test]
fn noiseless_kalman_converges() {
    let ds = datasets();
    let recs = run_filter(FilterKind::Kf, &ds[0], 0.0, &FilterConfig::constant_velocity(1e-4, 1e-3, 10), 1).unwrap();
    let r = evaluate(&MethodResults::new("kf", vec![(ds[0].id().to_string(), recs)]), &ds).unwrap();
    let tail = &r.per_frame[r.per_frame.len() - 3..];
    assert!(tail.iter().all(|f| f.err_mm < 0.01), "{:?}", tail);
}

#[test]
fn every_filter_emits_one_line_per_frame() {
    let ds = datasets();
    let cfg = FilterConfig::constant_velocity(0.5, 2.0, 200);
    for k in FilterKind::ALL {
        assert_eq!(run_filter(k, &ds[1], 2.0, &cfg, 4).unwrap().len(), ds[1].len());
    }
    let pf = |seed| run_filter(FilterKind::Pf, &ds[1], 2.0, &cfg, seed).unwrap();
    let strip = |v: Vec<TrackRecord>| v.into_iter().map(|r| (r.cx, r.cy)).collect::<Vec<_>>();
    assert_eq!(strip(pf(9)), strip(pf(9)));
}

#[test]
fn reports_round_trip_and_tabulate() {
    let ds = datasets();
    let a = evaluate(&MethodResults::new("with", vec![(ds[0].id().to_string(), shifted(&ds[0], 0.2))]), &ds).unwrap();
    let b = evaluate(&MethodResults::new("without", vec![(ds[0].id().to_string(), shifted(&ds[0], 0.5))]), &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    write_report_json(&path, &[a.clone(), b.clone()]).unwrap();
    assert_eq!(read_report_json(&path).unwrap(), vec![a.clone(), b.clone()]);
    let table = summary_csv(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(curves_csv(&[a.clone()]).unwrap().lines().count(), 1 + a.per_frame.len());
    let rows = ablation_rows(&a, &b);
    assert!(rows[0].dean && !rows[1].dean);
    assert!(ablation_csv(&rows).unwrap().contains("with,true"));
}

#[test]
fn results_directories_load_per_sequence() {
    let ds = datasets();
    let dir = tempfile::tempdir().unwrap();
    let mdir = dir.path().join("ours");
    std::fs::create_dir(&mdir).unwrap();
    for d in &ds {
        gwtrack_data::write_results(&mdir.join(format!("{}.jsonl", d.id())), &perfect(d)).unwrap();
    }
    let res = load_method_results(mdir.to_str().unwrap(), None).unwrap();
    assert_eq!(res.method, "ours");
    assert_eq!(res.sequences.len(), ds.len());
    let file = mdir.join(format!("{}.jsonl", ds[0].id()));
    let res = load_method_results(&format!("kf={}", file.display()), None).unwrap();
    assert!(res.center_only && res.sequences[0].0 == ds[0].id());
}

#[test]
fn overlays_contain_both_colors() {
    let ds = datasets();
    let dir = tempfile::tempdir().unwrap();
    write_overlays(dir.path(), &ds[0], &shifted(&ds[0], 2.0)).unwrap();
    let img = image::open(dir.path().join("00005.png")).unwrap().to_rgb8();
    assert!(img.pixels().any(|p| *p == overlay::PRED_COLOR));
    assert!(img.pixels().any(|p| *p == overlay::GT_COLOR));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), ds[0].len());
}
