//! Online tracking loop: crop, predict, decode, update.

use std::time::Instant;

use gwtrack_data::{BBox, GrayImage, SequenceDataset, TrackRecord};
use gwtrack_tensor::Tensor;

use crate::correlator::cosine_window;
use crate::error::{CoreError, Result};
use crate::heads::decode_box;
use crate::model::Model;
use crate::patch::{crop, Patch};
use crate::trainer::SearchGeometry;

/// When the template is re-cropped around the latest prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdatePolicy {
    /// Keep the initial template.
    Fixed,
    /// Re-crop after every frame.
    Refresh,
    /// Re-crop when the confidence reaches the threshold.
    Gated(f64),
}

impl UpdatePolicy {
    pub fn parse(s: &str, tau: f64) -> Option<Self> {
        match s {
            "fixed" => Some(UpdatePolicy::Fixed),
            "refresh" => Some(UpdatePolicy::Refresh),
            "gated" => Some(UpdatePolicy::Gated(tau)),
            _ => None,
        }
    }

    fn refresh(&self, conf: f64) -> bool {
        match *self {
            UpdatePolicy::Fixed => false,
            UpdatePolicy::Refresh => true,
            UpdatePolicy::Gated(tau) => conf >= tau,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackConfig {
    pub geometry: SearchGeometry,
    /// Blend weight `w` of the penalty `(1 - w) + w * hann`.
    pub window_weight: f64,
    pub policy: UpdatePolicy,
    /// Fraction of the decoded size adopted per frame.
    pub size_lr: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig { geometry: SearchGeometry::default(), window_weight: 0.3, policy: UpdatePolicy::Gated(0.9), size_lr: 0.3 }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(g.context > 0.0 && g.min_side > 0.0 && g.max_side >= g.min_side) {
            return Err(CoreError::Config("invalid search geometry".into()));
        }
        if !(0.0..=1.0).contains(&self.window_weight) || !(0.0..=1.0).contains(&self.size_lr) {
            return Err(CoreError::Config("window weight and size rate must lie in [0, 1]".into()));
        }
        if let UpdatePolicy::Gated(tau) = self.policy {
            if !(0.0..=1.0).contains(&tau) {
                return Err(CoreError::Config("gating threshold must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrackerState {
    pub template: Patch,
    template_features: Tensor<f32>,
    pub bbox: BBox,
    pub conf: f64,
    /// Number of frames seen, the initial one included.
    pub frame: usize,
}

/// Tracker bound to a read-only model.
#[derive(Clone, Debug)]
pub struct Tracker<'m> {
    model: &'m Model,
    cfg: TrackConfig,
    penalty: Tensor<f64>,
}

impl<'m> Tracker<'m> {
    pub fn new(model: &'m Model, cfg: TrackConfig) -> Result<Self> {
        cfg.validate()?;
        let b = &model.cfg.backbone;
        if b.search_size <= b.template_size {
            return Err(CoreError::Config("search size must exceed template size".into()));
        }
        let cells = b.search_size / b.total_stride();
        let hann = cosine_window(cells, cells);
        let w = cfg.window_weight;
        let penalty = hann.map(|v| (1.0 - w) + w * v);
        Ok(Tracker { model, cfg, penalty })
    }

    pub fn config(&self) -> &TrackConfig {
        &self.cfg
    }

    fn template_for(&self, frame: &GrayImage, b: &BBox) -> Result<Option<(Patch, Tensor<f32>)>> {
        let side = self.cfg.geometry.template_side(b);
        let patch = crop(frame, b.cx, b.cy, side, self.model.cfg.backbone.template_size)?;
        let Some(z) = patch.standardized::<f32>() else {
            return Ok(None);
        };
        let f = self.model.template_features(&z)?;
        Ok(Some((patch, f)))
    }

    /// Crops the initial template around `b`, which must lie inside the
    /// frame.
    pub fn init(&self, frame: &GrayImage, b: &BBox) -> Result<TrackerState> {
        let (w, h) = (frame.width() as f64, frame.height() as f64);
        if !b.is_valid() || !b.within(w, h) {
            return Err(CoreError::Input(format!("initial box {:?} is not inside the {}x{} frame", b, w, h)));
        }
        let (template, template_features) =
            self.template_for(frame, b)?.ok_or_else(|| CoreError::Input("initial template patch is flat".into()))?;
        Ok(TrackerState { template, template_features, bbox: *b, conf: 1.0, frame: 1 })
    }

    /// Predicts the box in `frame`. A flat search patch or a degenerate
    /// decoded box keeps the previous box with confidence 0.
    pub fn track_frame(&self, state: &mut TrackerState, frame: &GrayImage) -> Result<(BBox, f64)> {
        let prev = state.bbox;
        state.frame += 1;
        let side = self.cfg.geometry.search_side(&prev);
        let search = crop(frame, prev.cx, prev.cy, side, self.model.cfg.backbone.search_size)?;
        let decoded = match search.standardized::<f32>() {
            None => None,
            Some(x) => {
                let out = self.model.predict(&state.template_features, &x)?;
                let stride = self.model.cfg.backbone.total_stride() as f64;
                match decode_box(&out, stride, (0.0, 0.0), Some(&self.penalty)) {
                    Ok((b, conf)) if b.is_valid() && conf.is_finite() => Some((search.box_to_image(&b), conf)),
                    _ => None,
                }
            }
        };
        let Some((pred, conf)) = decoded else {
            state.conf = 0.0;
            return Ok((prev, 0.0));
        };
        let (fw, fh) = (frame.width() as f64, frame.height() as f64);
        let lr = self.cfg.size_lr;
        let bbox = BBox {
            cx: pred.cx.clamp(0.0, fw),
            cy: pred.cy.clamp(0.0, fh),
            w: (1.0 - lr) * prev.w + lr * pred.w,
            h: (1.0 - lr) * prev.h + lr * pred.h,
        };
        let conf = conf.clamp(0.0, 1.0);
        state.bbox = bbox;
        state.conf = conf;
        if self.cfg.policy.refresh(conf) {
            if let Some((t, f)) = self.template_for(frame, &bbox)? {
                state.template = t;
                state.template_features = f;
            }
        }
        Ok((bbox, conf))
    }

    /// Tracks a whole sequence from its first annotation. Frame 0 reports
    /// the initial box with confidence 1.
    pub fn track_sequence(&self, ds: &SequenceDataset) -> Result<Vec<TrackRecord>> {
        if ds.is_empty() || ds.annotations.is_empty() {
            return Err(CoreError::Input(format!("sequence {} has no annotated first frame", ds.id())));
        }
        let t0 = Instant::now();
        let b0 = ds.gt(0);
        let mut state = self.init(&ds.frames[0], &b0)?;
        let mut out = Vec::with_capacity(ds.len());
        out.push(TrackRecord::new(0, &b0, 1.0, t0.elapsed().as_secs_f64() * 1e3));
        for (i, frame) in ds.frames.iter().enumerate().skip(1) {
            let t = Instant::now();
            let (b, conf) = self.track_frame(&mut state, frame)?;
            out.push(TrackRecord::new(i, &b, conf, t.elapsed().as_secs_f64() * 1e3));
        }
        Ok(out)
    }
}
