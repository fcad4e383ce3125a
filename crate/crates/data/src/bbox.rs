use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("degenerate box: w={w}, h={h} (both must be positive and finite)")]
pub struct DegenerateBox {
    pub w: f64,
    pub h: f64,
}

/// Axis-aligned box given by its center and size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, DegenerateBox> {
        let b = BBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DegenerateBox> {
        BBox::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn validate(&self) -> Result<(), DegenerateBox> {
        let ok = [self.cx, self.cy].iter().all(|v| v.is_finite())
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DegenerateBox { w: self.w, h: self.h })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [x1, y1, x2, y2] = self.corners();
        x >= x1 && x <= x2 && y >= y1 && y <= y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        let [x1, y1, x2, y2] = self.corners();
        x1 >= 0.0 && y1 >= 0.0 && x2 <= width && y2 <= height
    }
}
