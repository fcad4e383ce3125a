//! Per-frame accuracy metrics and summary statistics.

use gwtrack_data::BBox;

use crate::error::{EvalError, Result};

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    // corner arithmetic would round identical boxes below one
    if a == b {
        return Ok(1.0);
    }
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Euclidean distance between box centres, converted to millimetres.
pub fn center_error_mm(pred: &BBox, gt: &BBox, spacing_mm: f64) -> f64 {
    spacing_mm * (pred.cx - gt.cx).hypot(pred.cy - gt.cy)
}

pub fn check_spacing(spacing_mm: f64) -> Result<()> {
    if spacing_mm > 0.0 && spacing_mm.is_finite() {
        Ok(())
    } else {
        Err(EvalError::Spacing(spacing_mm))
    }
}

/// Mean, population standard deviation, minimum and maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// `None` for an empty sample.
    pub fn of(xs: &[f64]) -> Option<Summary> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary { mean, std: var.sqrt(), min, max })
    }
}
