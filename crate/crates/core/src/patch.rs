//! Square patch extraction with bilinear sampling and reflected borders.
//!
//! Boxes use continuous pixel coordinates: pixel `i` covers `[i, i+1)`, so
//! its centre sits at `i + 0.5`.

use gwtrack_data::{BBox, GrayImage};
use gwtrack_tensor::{Scalar, Tensor};

use crate::error::{CoreError, Result};

/// Standard deviation below which a patch counts as flat and carries no
/// usable signal, on the `[0, 1]` intensity scale.
pub const FLAT_STD: f64 = 1e-3;

/// A resampled square patch and its placement in the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// `[1, S, S]` intensities in `[0, 1]`.
    pub pixels: Tensor<f64>,
    /// Image coordinates of the patch's top-left corner.
    pub origin: (f64, f64),
    /// Image pixels per patch pixel.
    pub scale: f64,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn box_to_patch(&self, b: &BBox) -> BBox {
        BBox {
            cx: (b.cx - self.origin.0) / self.scale,
            cy: (b.cy - self.origin.1) / self.scale,
            w: b.w / self.scale,
            h: b.h / self.scale,
        }
    }

    pub fn box_to_image(&self, b: &BBox) -> BBox {
        BBox {
            cx: self.origin.0 + b.cx * self.scale,
            cy: self.origin.1 + b.cy * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
        }
    }

    /// Patch standardized to zero mean and unit variance, or `None` when it
    /// is flat.
    pub fn standardized<T: Scalar>(&self) -> Option<Tensor<T>> {
        standardize(&self.pixels)
    }
}

/// Mirrors integer index `i` into `[0, n)` without repeating the edge
/// sample (`-1 -> 1`, `n -> n-2`).
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let t = i.rem_euclid(period);
    (if t >= n as i64 { period - t } else { t }) as usize
}

/// Bilinear sample of a row-major `w x h` plane at index coordinates
/// `(x, y)` (pixel centres on integers), reflecting outside the plane.
pub fn sample_bilinear(plane: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |xi: i64, yi: i64| plane[reflect_index(yi, h) * w + reflect_index(xi, w)];
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Intensities of `img` scaled to `[0, 1]`.
pub fn image_plane(img: &GrayImage) -> Vec<f64> {
    img.as_raw().iter().map(|&v| v as f64 / 255.0).collect()
}

/// Crops the `side x side` square centred at `(cx, cy)` and resamples it to
/// `out x out`.
pub fn crop(img: &GrayImage, cx: f64, cy: f64, side: f64, out: usize) -> Result<Patch> {
    crop_plane(&image_plane(img), img.width() as usize, img.height() as usize, cx, cy, side, out)
}

pub fn crop_plane(plane: &[f64], w: usize, h: usize, cx: f64, cy: f64, side: f64, out: usize) -> Result<Patch> {
    if !(side > 0.0) || !cx.is_finite() || !cy.is_finite() || out == 0 || plane.len() != w * h || w == 0 || h == 0 {
        return Err(CoreError::Input(format!("invalid crop: centre ({}, {}), side {}, out {}", cx, cy, side, out)));
    }
    let scale = side / out as f64;
    let origin = (cx - side / 2.0, cy - side / 2.0);
    let pixels = Tensor::from_fn([1, out, out], |i| {
        let (v, u) = (i / out, i % out);
        let x = origin.0 + (u as f64 + 0.5) * scale - 0.5;
        let y = origin.1 + (v as f64 + 0.5) * scale - 0.5;
        sample_bilinear(plane, w, h, x, y)
    });
    Ok(Patch { pixels, origin, scale })
}

pub fn standardize<T: Scalar>(t: &Tensor<f64>) -> Option<Tensor<T>> {
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= FLAT_STD) {
        return None;
    }
    Some(Tensor::from_fn(t.shape().to_vec(), |i| T::lit((t.data()[i] - mean) / std)))
}

/// Rotates a square `[1, S, S]` patch by `angle` radians and scales it by
/// `scale` about its centre: content at offset `d` from the centre moves to
/// `scale * R(angle) d`. Vacated areas are filled by reflection.
pub fn warp_about_center(pixels: &Tensor<f64>, angle: f64, scale: f64) -> Tensor<f64> {
    let s = pixels.shape()[1];
    let c = s as f64 / 2.0;
    let (sin, cos) = angle.sin_cos();
    Tensor::from_fn(pixels.shape().to_vec(), |i| {
        let (v, u) = (i / s, i % s);
        let (dx, dy) = (u as f64 + 0.5 - c, v as f64 + 0.5 - c);
        // inverse map: R(-angle) d / scale
        let sx = (cos * dx + sin * dy) / scale;
        let sy = (-sin * dx + cos * dy) / scale;
        sample_bilinear(pixels.data(), s, s, c + sx - 0.5, c + sy - 0.5)
    })
}

/// Axis-aligned hull of `b` after the transform applied by
/// [`warp_about_center`] on a patch of side `size`.
pub fn warp_box(b: &BBox, size: usize, angle: f64, scale: f64) -> BBox {
    let c = size as f64 / 2.0;
    let (sin, cos) = angle.sin_cos();
    let [x1, y1, x2, y2] = b.corners();
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in [(x1, y1), (x2, y1), (x1, y2), (x2, y2)] {
        let (dx, dy) = (x - c, y - c);
        let px = c + scale * (cos * dx - sin * dy);
        let py = c + scale * (sin * dx + cos * dy);
        lo = (lo.0.min(px), lo.1.min(py));
        hi = (hi.0.max(px), hi.1.max(py));
    }
    BBox { cx: (lo.0 + hi.0) / 2.0, cy: (lo.1 + hi.1) / 2.0, w: hi.0 - lo.0, h: hi.1 - lo.1 }
}
