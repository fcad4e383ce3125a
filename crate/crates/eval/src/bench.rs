//! Throughput measurement, always labelled with its threading mode.

use std::fmt;
use std::time::Instant;

use gwtrack_baselines::{run_filter, FilterConfig, FilterKind};
use gwtrack_core::{Model, TrackConfig, Tracker};
use gwtrack_data::SequenceDataset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpsMode {
    /// One frame at a time on the calling thread.
    SingleThread,
    /// Sequences tracked concurrently on `threads` workers; aggregate frames
    /// over wall time.
    Headline { threads: usize },
}

impl fmt::Display for FpsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FpsMode::SingleThread => write!(f, "single-thread"),
            FpsMode::Headline { threads } => write!(f, "headline, {} threads", threads),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpsMeasurement {
    pub fps: f64,
    pub frames: usize,
    pub seconds: f64,
    pub mode: FpsMode,
}

/// `(frames - warmup) / time after warmup`, from per-frame seconds.
pub fn fps_after_warmup(seconds: &[f64], warmup: usize) -> Result<FpsMeasurement> {
    let timed = seconds.get(warmup..).unwrap_or(&[]);
    let total: f64 = timed.iter().sum();
    if timed.is_empty() || !(total > 0.0) {
        return Err(EvalError::Empty(format!("no timed frames after {} warmup frames", warmup)));
    }
    Ok(FpsMeasurement { fps: timed.len() as f64 / total, frames: timed.len(), seconds: total, mode: FpsMode::SingleThread })
}

/// Single-threaded tracker throughput over frames `1..` of `ds`. The
/// initial template crop is never timed; `warmup` further frames are
/// excluded.
pub fn tracker_fps(model: &Model, cfg: TrackConfig, ds: &SequenceDataset, warmup: usize) -> Result<FpsMeasurement> {
    if ds.is_empty() || ds.annotations.is_empty() {
        return Err(EvalError::Empty(format!("sequence {} has no frames", ds.id())));
    }
    let tracker = Tracker::new(model, cfg)?;
    let mut state = tracker.init(&ds.frames[0], &ds.gt(0))?;
    let mut seconds = Vec::with_capacity(ds.len());
    for frame in &ds.frames[1..] {
        let t = Instant::now();
        tracker.track_frame(&mut state, frame)?;
        seconds.push(t.elapsed().as_secs_f64());
    }
    fps_after_warmup(&seconds, warmup)
}

/// Aggregate throughput with all `datasets` tracked concurrently on a pool
/// of `threads` workers.
pub fn headline_fps(model: &Model, cfg: TrackConfig, datasets: &[SequenceDataset], threads: usize) -> Result<FpsMeasurement> {
    let threads = threads.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EvalError::Empty(format!("cannot start worker pool: {}", e)))?;
    let tracker = Tracker::new(model, cfg)?;
    let t = Instant::now();
    let frames: usize = pool.install(|| {
        datasets.par_iter().map(|ds| tracker.track_sequence(ds).map(|r| r.len().saturating_sub(1))).sum::<Result<usize, _>>()
    })?;
    let seconds = t.elapsed().as_secs_f64();
    if frames == 0 {
        return Err(EvalError::Empty("no frames to track".into()));
    }
    Ok(FpsMeasurement { fps: frames as f64 / seconds, frames, seconds, mode: FpsMode::Headline { threads } })
}

/// Single-threaded filter throughput from the per-frame times recorded by
/// the filter front end.
pub fn filter_fps(kind: FilterKind, ds: &SequenceDataset, noise_sigma: f64, cfg: &FilterConfig, seed: u64, warmup: usize) -> Result<FpsMeasurement> {
    let records = run_filter(kind, ds, noise_sigma, cfg, seed).map_err(|e| EvalError::Empty(e.to_string()))?;
    let seconds: Vec<f64> = records.iter().skip(1).map(|r| r.ms / 1e3).collect();
    fps_after_warmup(&seconds, warmup)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_arithmetic() {
        let m = fps_after_warmup(&[0.02; 100], 0).unwrap();
        assert!((m.fps - 50.0).abs() < 1e-9);
        let m = fps_after_warmup(&[1.0, 0.02, 0.02], 1).unwrap();
        assert!((m.fps - 50.0).abs() < 1e-9 && m.frames == 2);
        assert!(fps_after_warmup(&[0.1], 1).is_err());
    }
}
