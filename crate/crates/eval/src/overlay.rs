//! Frames annotated with predicted and ground-truth boxes.

use std::fs;
use std::path::Path;

use gwtrack_data::{BBox, GrayImage, SequenceDataset, TrackRecord};
use image::{Rgb, RgbImage};

use crate::error::{EvalError, Result};
use crate::report::align;

pub const PRED_COLOR: Rgb<u8> = Rgb([255, 140, 0]);
pub const GT_COLOR: Rgb<u8> = Rgb([0, 200, 0]);

/// Draws the one-pixel outline of `b`, clipped to the image.
pub fn draw_box(img: &mut RgbImage, b: &BBox, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let [x1, y1, x2, y2] = b.corners();
    let (x1, y1) = (x1.floor() as i64, y1.floor() as i64);
    let (x2, y2) = ((x2.ceil() as i64 - 1).max(x1), (y2.ceil() as i64 - 1).max(y1));
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for x in x1..=x2 {
        put(x, y1);
        put(x, y2);
    }
    for y in y1..=y2 {
        put(x1, y);
        put(x2, y);
    }
}

/// Grey frame with the ground truth drawn first and the prediction on top.
pub fn render_overlay(frame: &GrayImage, pred: &BBox, gt: &BBox) -> RgbImage {
    let mut img = RgbImage::from_fn(frame.width(), frame.height(), |x, y| {
        let v = frame.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    draw_box(&mut img, gt, GT_COLOR);
    draw_box(&mut img, pred, PRED_COLOR);
    img
}

/// Writes `dir/%05d.png` for every frame of `ds`.
pub fn write_overlays(dir: &Path, ds: &SequenceDataset, records: &[TrackRecord]) -> Result<()> {
    let sorted = align(ds, records)?;
    fs::create_dir_all(dir).map_err(EvalError::io(dir))?;
    for ((frame, r), a) in ds.frames.iter().zip(sorted).zip(&ds.annotations) {
        let path = dir.join(format!("{:05}.png", r.frame));
        render_overlay(frame, &r.bbox(), &a.bbox).save(&path).map_err(|source| EvalError::Image { path, source })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_colors_present() {
        let frame = GrayImage::from_pixel(40, 40, image::Luma([128]));
        let img = render_overlay(&frame, &BBox::new(12.0, 12.0, 8.0, 8.0).unwrap(), &BBox::new(25.0, 25.0, 8.0, 8.0).unwrap());
        assert!(img.pixels().any(|p| *p == PRED_COLOR));
        assert!(img.pixels().any(|p| *p == GT_COLOR));
        assert_eq!(*img.get_pixel(8, 12), PRED_COLOR);
        assert_eq!(*img.get_pixel(0, 0), Rgb([128, 128, 128]));
    }

    #[test]
    fn boxes_are_clipped() {
        let frame = GrayImage::from_pixel(10, 10, image::Luma([0]));
        let img = render_overlay(&frame, &BBox::new(0.0, 0.0, 30.0, 30.0).unwrap(), &BBox::new(5.0, 5.0, 2.0, 2.0).unwrap());
        assert_eq!(img.dimensions(), (10, 10));
    }
}
