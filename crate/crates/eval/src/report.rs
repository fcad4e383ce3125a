//! Per-sequence and per-method reports over aligned tracking results.
//!
//! Frame 0 carries the given initial box and is excluded from every
//! statistic.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use gwtrack_data::{read_results, SequenceDataset, TrackRecord};
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::metrics::{center_error_mm, check_spacing, iou, Summary};

/// Method names whose boxes carry only a centre estimate.
pub const CENTER_ONLY: [&str; 4] = ["kf", "ekf", "ukf", "pf"];

pub fn is_center_only(method: &str) -> bool {
    CENTER_ONLY.contains(&method.to_ascii_lowercase().as_str())
}

/// Results of one method over one or more sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodResults {
    pub method: String,
    /// Report `iou` as null.
    pub center_only: bool,
    pub sequences: Vec<(String, Vec<TrackRecord>)>,
}

impl MethodResults {
    pub fn new(method: impl Into<String>, sequences: Vec<(String, Vec<TrackRecord>)>) -> Self {
        let method = method.into();
        MethodResults { center_only: is_center_only(&method), method, sequences }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub sequence: String,
    pub frame: usize,
    pub err_mm: f64,
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence: String,
    pub frames: usize,
    pub mean_err_mm: f64,
    pub std_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
    pub iou: Option<f64>,
    /// From the recorded per-frame wall times; null when none were
    /// recorded.
    pub fps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub mean_err_mm: f64,
    pub std_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
    pub fps: Option<f64>,
    pub iou: Option<f64>,
    pub sequences: Vec<SequenceReport>,
    pub per_frame: Vec<FrameMetric>,
}

/// Frames per second over recorded per-frame times in milliseconds.
pub fn fps_from_ms(ms: &[f64]) -> Option<f64> {
    let total: f64 = ms.iter().sum();
    (total > 0.0 && total.is_finite()).then(|| ms.len() as f64 / (total / 1e3))
}

/// Sorts `records` by frame and checks they cover exactly the annotated
/// frames of `ds`.
pub fn align<'a>(ds: &SequenceDataset, records: &'a [TrackRecord]) -> Result<Vec<&'a TrackRecord>> {
    let expected: BTreeSet<usize> = ds.annotations.iter().map(|a| a.frame).collect();
    let mut seen = BTreeSet::new();
    let mut extra = Vec::new();
    for r in records {
        if !expected.contains(&r.frame) || !seen.insert(r.frame) {
            extra.push(r.frame);
        }
    }
    let missing: Vec<usize> = expected.difference(&seen).copied().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::Alignment { sequence: ds.id().to_string(), missing, extra });
    }
    let mut sorted: Vec<&TrackRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.frame);
    Ok(sorted)
}

fn summary_or_empty(xs: &[f64], what: &str) -> Result<Summary> {
    Summary::of(xs).ok_or_else(|| EvalError::Empty(format!("{} has no frames after the initial one", what)))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Report for one method. A pure function of its inputs.
pub fn evaluate(results: &MethodResults, datasets: &[SequenceDataset]) -> Result<EvalReport> {
    if results.sequences.is_empty() {
        return Err(EvalError::Empty(format!("method {} has no results", results.method)));
    }
    let mut per_frame = Vec::new();
    let mut sequences = Vec::new();
    let mut all_ms = Vec::new();
    for (id, records) in &results.sequences {
        let ds = datasets.iter().find(|d| d.id() == id).ok_or_else(|| EvalError::UnknownSequence(id.clone()))?;
        let spacing = ds.pixel_spacing_mm();
        check_spacing(spacing)?;
        let sorted = align(ds, records)?;
        let mut errs = Vec::new();
        let mut ious = Vec::new();
        let mut ms = Vec::new();
        for (r, a) in sorted.iter().zip(&ds.annotations).skip(1) {
            let pred = r.bbox();
            let err = center_error_mm(&pred, &a.bbox, spacing);
            let v = if results.center_only { None } else { Some(iou(&pred, &a.bbox)?) };
            errs.push(err);
            ious.extend(v);
            ms.push(r.ms);
            per_frame.push(FrameMetric { sequence: id.clone(), frame: r.frame, err_mm: err, iou: v });
        }
        let s = summary_or_empty(&errs, id)?;
        sequences.push(SequenceReport {
            sequence: id.clone(),
            frames: errs.len(),
            mean_err_mm: s.mean,
            std_mm: s.std,
            min_mm: s.min,
            max_mm: s.max,
            iou: (!results.center_only).then(|| mean(&ious)),
            fps: fps_from_ms(&ms),
        });
        all_ms.extend(ms);
    }
    let errs: Vec<f64> = per_frame.iter().map(|f| f.err_mm).collect();
    let s = summary_or_empty(&errs, &results.method)?;
    let ious: Vec<f64> = per_frame.iter().filter_map(|f| f.iou).collect();
    Ok(EvalReport {
        method: results.method.clone(),
        mean_err_mm: s.mean,
        std_mm: s.std,
        min_mm: s.min,
        max_mm: s.max,
        fps: fps_from_ms(&all_ms),
        iou: (!results.center_only).then(|| mean(&ious)),
        sequences,
        per_frame,
    })
}

/// One row of a with/without edge-attention comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub dean: bool,
    pub mean_err_mm: f64,
    pub std_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
    pub fps: Option<f64>,
    pub iou: Option<f64>,
}

impl AblationRow {
    fn from_report(r: &EvalReport, dean: bool) -> Self {
        AblationRow {
            method: r.method.clone(),
            dean,
            mean_err_mm: r.mean_err_mm,
            std_mm: r.std_mm,
            min_mm: r.min_mm,
            max_mm: r.max_mm,
            fps: r.fps,
            iou: r.iou,
        }
    }
}

/// Paired rows, with the edge-attention variant first.
pub fn ablation_rows(with: &EvalReport, without: &EvalReport) -> [AblationRow; 2] {
    [AblationRow::from_report(with, true), AblationRow::from_report(without, false)]
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report_json(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports)?;
    fs::write(path, text + "\n").map_err(EvalError::io(path))
}

pub fn read_report_json(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path).map_err(EvalError::io(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// One row per method; null values are left empty.
pub fn summary_csv(reports: &[EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "mean_err_mm", "std_mm", "min_mm", "max_mm", "fps", "iou"])?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            r.mean_err_mm.to_string(),
            r.std_mm.to_string(),
            r.min_mm.to_string(),
            r.max_mm.to_string(),
            opt(r.fps),
            opt(r.iou),
        ])?;
    }
    finish(w)
}

/// Per-frame error curves of every method.
pub fn curves_csv(reports: &[EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "sequence", "frame", "err_mm", "iou"])?;
    for r in reports {
        for f in &r.per_frame {
            w.write_record([r.method.clone(), f.sequence.clone(), f.frame.to_string(), f.err_mm.to_string(), opt(f.iou)])?;
        }
    }
    finish(w)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "dean", "mean_err_mm", "std_mm", "min_mm", "max_mm", "fps", "iou"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.dean.to_string(),
            r.mean_err_mm.to_string(),
            r.std_mm.to_string(),
            r.min_mm.to_string(),
            r.max_mm.to_string(),
            opt(r.fps),
            opt(r.iou),
        ])?;
    }
    finish(w)
}

/// Parses `[METHOD=]PATH`. A directory holds one `<sequence>.jsonl` per
/// sequence and defaults the method to its name. A file belongs to
/// `sequence` when given, else to the sequence named by its stem, and
/// defaults the method to its stem.
pub fn load_method_results(spec: &str, sequence: Option<&str>) -> Result<MethodResults> {
    let (name, path) = match spec.split_once('=') {
        Some((m, p)) if !m.is_empty() => (Some(m.to_string()), PathBuf::from(p)),
        _ => (None, PathBuf::from(spec)),
    };
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&path)
            .map_err(EvalError::io(&path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(EvalError::Empty(format!("no .jsonl results in {}", path.display())));
        }
        let sequences = files.iter().map(|f| Ok((stem(f), read_results(f)?))).collect::<Result<_>>()?;
        let method = name.unwrap_or_else(|| path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        Ok(MethodResults::new(method, sequences))
    } else {
        let records = read_results(&path)?;
        let seq = sequence.map(str::to_string).unwrap_or_else(|| stem(&path));
        Ok(MethodResults::new(name.unwrap_or_else(|| stem(&path)), vec![(seq, records)]))
    }
}
