//! DSA-like frame rendering along a guidewire path.

use std::f64::consts::PI;
use std::fmt::Write as _;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::DataError;
use crate::geometry::{point_segment_distance, ArcPath, Vec2};
use crate::phantom::PhantomSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "none" => Some(Split::Unassigned),
            _ => None,
        }
    }
}

/// A darkening horizontal band that drifts vertically while active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionBand {
    pub start_frame: usize,
    pub end_frame: usize,
    pub y: f64,
    pub speed: f64,
    pub half_width: f64,
    pub strength: f64,
}

impl OcclusionBand {
    fn attenuation(&self, frame: usize, y: f64) -> f64 {
        if frame < self.start_frame || frame >= self.end_frame {
            return 0.0;
        }
        let centre = self.y + self.speed * (frame - self.start_frame) as f64;
        let d = (y - centre).abs();
        if d >= self.half_width + 4.0 {
            0.0
        } else if d <= self.half_width {
            self.strength
        } else {
            self.strength * (1.0 - (d - self.half_width) / 4.0)
        }
    }
}

/// Everything needed to regenerate a sequence, also stored as `meta.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMeta {
    pub id: String,
    pub frame_count: usize,
    pub pixel_spacing_mm: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub split: Split,
    pub noise_sigma: f64,
    /// Fractional loss of vessel contrast at the trough of the drift cycle.
    pub contrast_drift: f64,
    pub cardiac_amplitude: f64,
    pub cardiac_period: f64,
    /// Tip arc-length position at frame 0 and mean advance per frame, px.
    pub tip_start: f64,
    pub tip_speed: f64,
    pub box_w: f64,
    pub box_h: f64,
    pub occlusion: Vec<OcclusionBand>,
}

impl SequenceMeta {
    pub fn new(id: impl Into<String>, frame_count: usize, seed: u64) -> Self {
        SequenceMeta {
            id: id.into(),
            frame_count,
            pixel_spacing_mm: 0.3,
            seed,
            width: 512,
            height: 512,
            split: Split::Unassigned,
            noise_sigma: 0.0,
            contrast_drift: 0.0,
            cardiac_amplitude: 0.0,
            cardiac_period: 25.0,
            tip_start: 40.0,
            tip_speed: 0.0,
            box_w: 12.0,
            box_h: 12.0,
            occlusion: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{}={}", k, v);
        };
        kv("id", self.id.clone());
        kv("frames", self.frame_count.to_string());
        kv("pixel_spacing_mm", self.pixel_spacing_mm.to_string());
        kv("seed", self.seed.to_string());
        kv("width", self.width.to_string());
        kv("height", self.height.to_string());
        kv("split", self.split.as_str().to_string());
        kv("noise_sigma", self.noise_sigma.to_string());
        kv("contrast_drift", self.contrast_drift.to_string());
        kv("cardiac_amplitude", self.cardiac_amplitude.to_string());
        kv("cardiac_period", self.cardiac_period.to_string());
        kv("tip_start", self.tip_start.to_string());
        kv("tip_speed", self.tip_speed.to_string());
        kv("box_w", self.box_w.to_string());
        kv("box_h", self.box_h.to_string());
        let occ: Vec<String> = self
            .occlusion
            .iter()
            .map(|b| format!("{}:{}:{}:{}:{}:{}", b.start_frame, b.end_frame, b.y, b.speed, b.half_width, b.strength))
            .collect();
        kv("occlusion", occ.join(";"));
        s
    }

    /// Parses `key=value` lines; `#` starts a comment line. `origin` names
    /// the source in error messages.
    pub fn from_text(text: &str, origin: &std::path::Path) -> Result<Self, DataError> {
        let mut map = std::collections::HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| DataError::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected key=value, got {:?}", line),
            })?;
            map.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |k: &str| -> Result<&(usize, String), DataError> {
            map.get(k).ok_or_else(|| DataError::Inconsistent(format!("{}: missing key {:?}", origin.display(), k)))
        };
        fn num<T: std::str::FromStr>(origin: &std::path::Path, entry: &(usize, String), key: &str) -> Result<T, DataError> {
            entry.1.parse().map_err(|_| DataError::Parse {
                path: origin.to_path_buf(),
                line: entry.0,
                msg: format!("bad value for {}: {:?}", key, entry.1),
            })
        }
        let mut meta = SequenceMeta::new(get("id")?.1.clone(), num(origin, get("frames")?, "frames")?, num(origin, get("seed")?, "seed")?);
        meta.pixel_spacing_mm = num(origin, get("pixel_spacing_mm")?, "pixel_spacing_mm")?;
        macro_rules! opt {
            ($field:ident, $key:literal) => {
                if let Some(e) = map.get($key) {
                    meta.$field = num(origin, e, $key)?;
                }
            };
        }
        opt!(width, "width");
        opt!(height, "height");
        opt!(noise_sigma, "noise_sigma");
        opt!(contrast_drift, "contrast_drift");
        opt!(cardiac_amplitude, "cardiac_amplitude");
        opt!(cardiac_period, "cardiac_period");
        opt!(tip_start, "tip_start");
        opt!(tip_speed, "tip_speed");
        opt!(box_w, "box_w");
        opt!(box_h, "box_h");
        if let Some((line, v)) = map.get("split") {
            meta.split = Split::parse(v).ok_or_else(|| DataError::Parse {
                path: origin.to_path_buf(),
                line: *line,
                msg: format!("unknown split {:?}", v),
            })?;
        }
        if let Some((line, v)) = map.get("occlusion") {
            for part in v.split(';').filter(|p| !p.is_empty()) {
                let f: Vec<&str> = part.split(':').collect();
                let bad = || DataError::Parse { path: origin.to_path_buf(), line: *line, msg: format!("bad occlusion band {:?}", part) };
                if f.len() != 6 {
                    return Err(bad());
                }
                let p = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
                meta.occlusion.push(OcclusionBand {
                    start_frame: f[0].parse().map_err(|_| bad())?,
                    end_frame: f[1].parse().map_err(|_| bad())?,
                    y: p(2)?,
                    speed: p(3)?,
                    half_width: p(4)?,
                    strength: p(5)?,
                });
            }
        }
        Ok(meta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: usize,
    #[serde(flatten)]
    pub bbox: BBox,
}

/// Ordered grayscale frames with one ground-truth box per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub meta: SequenceMeta,
    pub frames: Vec<GrayImage>,
    pub annotations: Vec<Annotation>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn pixel_spacing_mm(&self) -> f64 {
        self.meta.pixel_spacing_mm
    }

    pub fn gt(&self, frame: usize) -> BBox {
        self.annotations[frame].bbox
    }
}

/// Rendered sequence plus generator-internal ground truth.
#[derive(Clone, Debug)]
pub struct GeneratedSequence {
    pub dataset: SequenceDataset,
    pub tip_positions: Vec<Vec2>,
    pub tip_arclength: Vec<f64>,
}

struct Layer {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Layer {
    fn new(w: usize, h: usize) -> Self {
        Layer { w, h, data: vec![0.0; w * h] }
    }

    /// Max-combines a tube of radius `r` around the polyline; the profile is
    /// the normalized chord length through a cylinder.
    fn stamp_tube(&mut self, pts: &[Vec2], r: f64, depth: f64) {
        let re = r + 0.5;
        let single = [pts[0], pts[0]];
        let pairs: Vec<(Vec2, Vec2)> =
            if pts.len() < 2 { vec![(single[0], single[1])] } else { pts.windows(2).map(|w| (w[0], w[1])).collect() };
        for (a, b) in pairs {
            let x0 = (a.x.min(b.x) - re).floor().max(0.0) as usize;
            let x1 = ((a.x.max(b.x) + re).ceil().max(0.0) as usize).min(self.w.saturating_sub(1));
            let y0 = (a.y.min(b.y) - re).floor().max(0.0) as usize;
            let y1 = ((a.y.max(b.y) + re).ceil().max(0.0) as usize).min(self.h.saturating_sub(1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = point_segment_distance(Vec2::new(x as f64 + 0.5, y as f64 + 0.5), a, b);
                    if d < re {
                        let v = (depth * (1.0 - (d / re).powi(2)).sqrt()) as f32;
                        let px = &mut self.data[y * self.w + x];
                        if v > *px {
                            *px = v;
                        }
                    }
                }
            }
        }
    }

    fn bilinear(&self, x: f64, y: f64) -> f32 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let (tx, ty) = ((fx - x0) as f32, (fy - y0) as f32);
        let get = |xi: f64, yi: f64| -> f32 {
            if xi < 0.0 || yi < 0.0 || xi >= self.w as f64 || yi >= self.h as f64 {
                0.0
            } else {
                self.data[yi as usize * self.w + xi as usize]
            }
        };
        let a = get(x0, y0) * (1.0 - tx) + get(x0 + 1.0, y0) * tx;
        let b = get(x0, y0 + 1.0) * (1.0 - tx) + get(x0 + 1.0, y0 + 1.0) * tx;
        a * (1.0 - ty) + b * ty
    }
}

/// Smooth anatomical background: bright base with broad blobs and two
/// rib-like bands.
fn render_background(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let base = rng.random_range(175.0..205.0);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(40.0..130.0),
                rng.random_range(-22.0..18.0),
            )
        })
        .collect();
    let bands: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            let theta = rng.random_range(-0.6..0.6);
            (theta, rng.random_range(0.2..0.8) * h as f64, rng.random_range(10.0..22.0), rng.random_range(-16.0..-6.0))
        })
        .collect();
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = base;
            for &(bx, by, s, a) in &blobs {
                let d2 = (xf - bx).powi(2) + (yf - by).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            for &(theta, off, half, a) in &bands {
                let d = (yf - off) * theta.cos() - (xf - w as f64 / 2.0) * theta.sin();
                v += a * (-(d * d) / (2.0 * half * half)).exp();
            }
            out[y * w + x] = v as f32;
        }
    }
    out
}

const WIRE_RADIUS: f64 = 0.8;
const WIRE_DEPTH: f64 = 55.0;
const TIP_DEPTH: f64 = 105.0;

/// Tip radius for a given annotation box: the box spans about twice the
/// visible tip blob.
pub fn tip_radius(box_w: f64, box_h: f64) -> f64 {
    0.25 * box_w.min(box_h)
}

/// Renders `meta.frame_count` frames of a guidewire advancing along `path`.
pub fn gen_sequence(phantom: &PhantomSpec, path: &ArcPath, meta: &SequenceMeta) -> Result<GeneratedSequence, DataError> {
    if meta.frame_count == 0 {
        return Err(DataError::InvalidParam("frame count must be >= 1".into()));
    }
    if !(meta.box_w > 0.0 && meta.box_h > 0.0) {
        return Err(DataError::InvalidParam("annotation box must have positive size".into()));
    }
    if meta.noise_sigma < 0.0 || meta.tip_speed < 0.0 || !(0.0..1.0).contains(&meta.contrast_drift) {
        return Err(DataError::InvalidParam("noise, speed and drift must be non-negative (drift < 1)".into()));
    }
    if path.points().len() < 2 {
        return Err(DataError::InvalidParam("guidewire path needs at least two points".into()));
    }
    let mut s = 0.0;
    while s <= path.length() {
        let p = path.at(s);
        if !phantom.in_lumen(p, 0.5) {
            return Err(DataError::PathOutsideLumen { x: p.x, y: p.y });
        }
        s += 2.0;
    }

    let (w, h) = (meta.width, meta.height);
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    let background = render_background(w, h, &mut rng);
    let mut vessels = Layer::new(w, h);
    for seg in &phantom.segments {
        vessels.stamp_tube(&seg.polyline(1.0), seg.width / 2.0, seg.intensity);
    }
    let phase = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let speed_phase = rng.random_range(0.0..2.0 * PI);
    let tip_r = tip_radius(meta.box_w, meta.box_h);

    let mut frames = Vec::with_capacity(meta.frame_count);
    let mut annotations = Vec::with_capacity(meta.frame_count);
    let mut tips = Vec::with_capacity(meta.frame_count);
    let mut arcs = Vec::with_capacity(meta.frame_count);
    let mut arc = meta.tip_start;
    let mut overlay = Layer::new(w, h);
    for t in 0..meta.frame_count {
        if t > 0 {
            // speed modulated in [0.4, 1.6] x mean, never negative
            let m = 1.0 + 0.6 * (2.0 * PI * t as f64 / 31.0 + speed_phase).sin();
            arc = (arc + meta.tip_speed * m).min(path.length());
        }
        let cyc = 2.0 * PI * t as f64 / meta.cardiac_period;
        let offset = Vec2::new(
            meta.cardiac_amplitude * (cyc + phase.0).sin(),
            0.6 * meta.cardiac_amplitude * (cyc + phase.1).sin(),
        );
        let contrast = 1.0 - meta.contrast_drift * (0.5 + 0.5 * (2.0 * PI * t as f64 / 47.0 + drift_phase).sin());
        let tip = path.at(arc) + offset;

        overlay.data.iter_mut().for_each(|v| *v = 0.0);
        let wire: Vec<Vec2> = path.prefix(arc).into_iter().map(|p| p + offset).collect();
        overlay.stamp_tube(&wire, WIRE_RADIUS, WIRE_DEPTH);
        overlay.stamp_tube(&[tip], tip_r, TIP_DEPTH);

        let mut img = GrayImage::new(w as u32, h as u32);
        for y in 0..h {
            let occ: f64 = meta.occlusion.iter().map(|b| b.attenuation(t, y as f64 + 0.5)).sum();
            for x in 0..w {
                let i = y * w + x;
                let ves = vessels.bilinear(x as f64 + 0.5 - offset.x, y as f64 + 0.5 - offset.y) as f64;
                let mut v = background[i] as f64 - contrast * ves - overlay.data[i] as f64 - occ;
                if meta.noise_sigma > 0.0 {
                    let n: f64 = rng.sample(StandardNormal);
                    v += meta.noise_sigma * n;
                }
                img.as_mut()[i] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        let bbox = BBox::new(tip.x, tip.y, meta.box_w, meta.box_h).map_err(|e| DataError::InvalidParam(e.to_string()))?;
        if !bbox.within(w as f64, h as f64) {
            return Err(DataError::InvalidParam(format!("frame {}: tip box leaves the image", t)));
        }
        frames.push(img);
        annotations.push(Annotation { frame: t, bbox });
        tips.push(tip);
        arcs.push(arc);
    }
    Ok(GeneratedSequence {
        dataset: SequenceDataset { meta: meta.clone(), frames, annotations },
        tip_positions: tips,
        tip_arclength: arcs,
    })
}
