//! Per-frame tracking results shared by the tracker, the baseline filters
//! and evaluation, stored as JSON Lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::DataError;

/// One tracked frame. Boxes are in image pixels; `ms` is the wall time
/// spent on the frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
    pub ms: f64,
}

impl TrackRecord {
    pub fn new(frame: usize, b: &BBox, conf: f64, ms: f64) -> Self {
        TrackRecord { frame, cx: b.cx, cy: b.cy, w: b.w, h: b.h, conf, ms }
    }

    pub fn bbox(&self) -> BBox {
        BBox { cx: self.cx, cy: self.cy, w: self.w, h: self.h }
    }
}

pub fn to_jsonl(records: &[TrackRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

pub fn write_results(path: &Path, records: &[TrackRecord]) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(DataError::io(path))?;
    f.write_all(to_jsonl(records).as_bytes()).map_err(DataError::io(path))
}

pub fn parse_results(text: &str, origin: &Path) -> Result<Vec<TrackRecord>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TrackRecord = serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_results(path: &Path) -> Result<Vec<TrackRecord>, DataError> {
    let text = fs::read_to_string(path).map_err(DataError::io(path))?;
    parse_results(&text, path)
}
