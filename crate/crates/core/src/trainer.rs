//! Offline training: pair sampling, augmentation, SGD with momentum and
//! weight decay under a cosine schedule.

use std::io::Write;
use std::path::Path;

use gwtrack_data::{BBox, SequenceDataset};
use gwtrack_tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::loss::{assign_labels, total_loss, LossWeights};
use crate::model::forward;
use crate::params::{init_params, with_meta, Params};
use crate::patch::{crop_plane, image_plane, warp_about_center, warp_box, Patch};

/// Search side in image pixels for a target box: `context * max(w, h)`
/// clamped to `[min_side, max_side]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchGeometry {
    pub context: f64,
    pub min_side: f64,
    pub max_side: f64,
}

impl Default for SearchGeometry {
    fn default() -> Self {
        SearchGeometry { context: 2.5, min_side: 64.0, max_side: 256.0 }
    }
}

impl SearchGeometry {
    pub fn search_side(&self, b: &BBox) -> f64 {
        (self.context * b.w.max(b.h)).clamp(self.min_side, self.max_side)
    }

    /// The template covers half the search side, so both patches share one
    /// pixel scale when the template is half the search size.
    pub fn template_side(&self, b: &BBox) -> f64 {
        self.search_side(b) / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Intensity multiplier range is `1 +- intensity`.
    pub intensity: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { rotation_deg: 30.0, scale_min: 0.9, scale_max: 1.1, intensity: 0.1 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig { rotation_deg: 0.0, scale_min: 1.0, scale_max: 1.0, intensity: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub max_frame_gap: usize,
    /// Search centre jitter as a fraction of the search side, per axis.
    pub search_shift: f64,
    pub weights: LossWeights,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub geometry: SearchGeometry,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_max: 0.01,
            lr_min: 1e-4,
            steps: 2000,
            batch: 8,
            seed: 0,
            augment: AugmentConfig::default(),
            max_frame_gap: 5,
            search_shift: 0.2,
            weights: LossWeights::default(),
            grad_clip: Some(10.0),
            geometry: SearchGeometry::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min) {
            return bad("learning rates must satisfy lr_max >= lr_min > 0");
        }
        if self.batch == 0 || self.max_frame_gap == 0 {
            return bad("batch and max_frame_gap must be positive");
        }
        if !(0.0..0.25).contains(&self.search_shift) {
            return bad("search_shift must lie in [0, 0.25) to keep the target in the central half");
        }
        let a = &self.augment;
        if !(a.rotation_deg >= 0.0 && a.scale_min > 0.0 && a.scale_max >= a.scale_min && (0.0..1.0).contains(&a.intensity)) {
            return bad("invalid augmentation ranges");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }
}

/// Template and search patches from one sequence with the target box in
/// search-patch pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub template: Patch,
    pub search: Patch,
    pub gt: BBox,
    /// Source frames of the template and search patches.
    pub frames: (usize, usize),
}

/// Draws a pair `(t, t + gap)` with `gap` uniform in `[1, max_frame_gap]`
/// (capped by the sequence length). The template is centred on the box at
/// `t`; the search patch is sized from that box and centred on the box at
/// `t + gap`, jittered by up to `search_shift * side` per axis.
pub fn sample_pairs(
    ds: &SequenceDataset,
    rng: &mut impl Rng,
    max_frame_gap: usize,
    model: &ModelConfig,
    geometry: &SearchGeometry,
    search_shift: f64,
) -> Result<TrainingPair> {
    let n = ds.len();
    if n < 2 || ds.annotations.len() != n {
        return Err(CoreError::Input(format!("sequence {} needs at least 2 annotated frames", ds.id())));
    }
    if max_frame_gap == 0 {
        return Err(CoreError::Config("max_frame_gap must be positive".into()));
    }
    let gap = rng.random_range(1..=max_frame_gap.min(n - 1));
    let t = rng.random_range(0..n - gap);
    let (bt, bs) = (ds.gt(t), ds.gt(t + gap));
    let side = geometry.search_side(&bt);
    let (dx, dy) = if search_shift > 0.0 {
        (rng.random_range(-search_shift..search_shift) * side, rng.random_range(-search_shift..search_shift) * side)
    } else {
        (0.0, 0.0)
    };
    let (w, h) = (ds.meta.width, ds.meta.height);
    let template = crop_plane(&image_plane(&ds.frames[t]), w, h, bt.cx, bt.cy, side / 2.0, model.backbone.template_size)?;
    let search = crop_plane(&image_plane(&ds.frames[t + gap]), w, h, bs.cx + dx, bs.cy + dy, side, model.backbone.search_size)?;
    let gt = search.box_to_patch(&bs);
    Ok(TrainingPair { template, search, gt, frames: (t, t + gap) })
}

/// Rotates, scales and rescales the intensity of the search patch about
/// its centre; the target box becomes the hull of its transformed corners.
pub fn augment(pair: &TrainingPair, cfg: &AugmentConfig, rng: &mut impl Rng) -> TrainingPair {
    let angle = if cfg.rotation_deg > 0.0 { rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg).to_radians() } else { 0.0 };
    let scale = if cfg.scale_max > cfg.scale_min { rng.random_range(cfg.scale_min..=cfg.scale_max) } else { cfg.scale_min };
    let gain = if cfg.intensity > 0.0 { rng.random_range(1.0 - cfg.intensity..=1.0 + cfg.intensity) } else { 1.0 };
    apply_augment(pair, angle, scale, gain)
}

/// Deterministic form of [`augment`] with explicit parameters.
pub fn apply_augment(pair: &TrainingPair, angle: f64, scale: f64, gain: f64) -> TrainingPair {
    let mut out = pair.clone();
    if angle != 0.0 || scale != 1.0 {
        out.search.pixels = warp_about_center(&pair.search.pixels, angle, scale);
        out.gt = warp_box(&pair.gt, pair.search.size(), angle, scale);
    }
    if gain != 1.0 {
        out.search.pixels = out.search.pixels.map(|v| (v * gain).clamp(0.0, 1.0));
    }
    out
}

/// Velocity buffers of the momentum optimizer, laid out like the
/// parameters.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: ParamStore,
}

/// `v <- mu v + g + wd p; p <- p - lr v`, for every parameter.
pub fn sgd_step(params: &mut ParamStore, grads: &ParamStore, state: &mut SgdState, lr: f64, mu: f64, wd: f64) -> Result<()> {
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).ok_or_else(|| CoreError::MissingParam(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(CoreError::Shape(format!("gradient of {} is {:?}, parameter is {:?}", name, g.shape(), p.shape())));
        }
        if !state.velocity.contains(name) {
            state.velocity.insert(name.clone(), Tensor::zeros(p.shape().to_vec()));
        }
        let v = state.velocity.get_mut(name).expect("inserted above");
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(g.data()) {
            *vv = mu * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi t / T)) / 2`; steps past `T`
/// stay at `lr_min`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 || t >= total {
        return lr_min;
    }
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
}

/// Values each loss weight takes in grid search.
pub const GRID_VALUES: [f64; 3] = [0.5, 1.0, 2.0];

/// All 27 `(loc, cls, reg)` weight triples over [`GRID_VALUES`], `reg`
/// varying fastest.
pub fn loss_weight_grid() -> Vec<LossWeights> {
    let mut out = Vec::with_capacity(27);
    for loc in GRID_VALUES {
        for cls in GRID_VALUES {
            for reg in GRID_VALUES {
                out.push(LossWeights { loc, cls, reg });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub loc: f64,
    pub cls: f64,
    pub reg: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,lr,loss_total,loss_loc,loss_cls,loss_reg";

pub fn loss_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in curve {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.lr, r.total, r.loc, r.cls, r.reg));
    }
    s
}

pub fn write_loss_csv(path: &Path, curve: &[LossRecord]) -> Result<()> {
    let io = |source| CoreError::Io { path: path.to_path_buf(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(loss_csv(curve).as_bytes()).map_err(io)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Trained parameters with architecture metadata.
    pub checkpoint: ParamStore,
    pub curve: Vec<LossRecord>,
    /// Steps whose gradient norm exceeded the clip threshold.
    pub clipped_steps: usize,
}

/// Per-sample loss components and parameter gradients.
struct SampleResult {
    losses: [f64; 4],
    grads: ParamStore<f32>,
}

fn sample_gradients(store: &ParamStore<f32>, model: &ModelConfig, weights: &LossWeights, pair: &TrainingPair) -> Result<SampleResult> {
    let (Some(z), Some(x)) = (pair.template.standardized::<f32>(), pair.search.standardized::<f32>()) else {
        return Err(CoreError::Input(format!("flat training patch from frames {:?}", pair.frames)));
    };
    let tape = Tape::<f32>::new();
    let p = Params::bind(&tape, store, true);
    let heads = forward(&tape, &p, model, tape.constant(z), tape.constant(x))?;
    let hs = tape.shape(heads.cls);
    let labels = assign_labels(hs[1], hs[2], model.backbone.total_stride() as f64, &pair.gt);
    let l = total_loss(&tape, &heads, &labels, weights)?;
    let val = |v| tape.value(v).item() as f64;
    let losses = [val(l.total), val(l.loc), val(l.cls), val(l.reg)];
    let mut grads = tape.backward(l.total)?;
    Ok(SampleResult { losses, grads: p.collect_grads(&mut grads, store) })
}

/// Draws a training pair whose patches both carry signal.
fn draw_pair(data: &[SequenceDataset], rng: &mut ChaCha8Rng, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainingPair> {
    for _ in 0..100 {
        let ds = &data[rng.random_range(0..data.len())];
        let pair = sample_pairs(ds, rng, cfg.max_frame_gap, model, &cfg.geometry, cfg.search_shift)?;
        let pair = augment(&pair, &cfg.augment, rng);
        if pair.template.standardized::<f32>().is_some() && pair.search.standardized::<f32>().is_some() {
            return Ok(pair);
        }
    }
    Err(CoreError::Input("could not draw a training pair with non-flat patches".into()))
}

/// Source of training pairs for one step.
pub enum PairSource<'a> {
    /// Random pairs drawn from these sequences.
    Sequences(&'a [SequenceDataset]),
    /// The same pairs every step.
    Fixed(&'a [TrainingPair]),
}

/// Trains from `init` (or a fresh initialization seeded by `cfg.seed`).
///
/// Per-sample passes run on the rayon pool; their gradients are summed in
/// sample order, so results do not depend on the number of threads.
pub fn train(source: PairSource<'_>, model: &ModelConfig, cfg: &TrainConfig, init: Option<ParamStore>) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    match source {
        PairSource::Sequences(d) if d.is_empty() => return Err(CoreError::Input("empty training set".into())),
        PairSource::Fixed(p) if p.is_empty() => return Err(CoreError::Input("empty training set".into())),
        _ => {}
    }
    let mut params = match init {
        Some(p) => {
            p.check_layout(&init_params(model, 0)?).map_err(|e| CoreError::Architecture(e.to_string()))?;
            p
        }
        None => init_params(model, cfg.seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut state = SgdState::default();
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut clipped_steps = 0;
    for step in 0..cfg.steps {
        let pairs: Vec<TrainingPair> = match source {
            PairSource::Sequences(data) => (0..cfg.batch).map(|_| draw_pair(data, &mut rng, model, cfg)).collect::<Result<_>>()?,
            PairSource::Fixed(p) => p.to_vec(),
        };
        let store32 = params.cast::<f32>();
        let results: Vec<SampleResult> = pairs
            .par_iter()
            .map(|pair| sample_gradients(&store32, model, &cfg.weights, pair))
            .collect::<Result<_>>()
            .map_err(|e| match e {
                CoreError::NonFinite(_) | CoreError::Tensor(gwtrack_tensor::TensorError::NonFinite(_)) => {
                    CoreError::Divergence { step, detail: e.to_string() }
                }
                e => e,
            })?;

        let inv = 1.0 / results.len() as f64;
        let mut losses = [0.0; 4];
        let mut grads: ParamStore = ParamStore::new();
        for r in &results {
            for k in 0..4 {
                losses[k] += r.losses[k] * inv;
            }
            for (name, g) in r.grads.iter() {
                let g64: Tensor<f64> = g.cast();
                match grads.get_mut(name) {
                    Some(acc) => acc.add_assign(&g64),
                    None => grads.insert(name.clone(), g64),
                }
            }
        }
        let mut sq = 0.0;
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= inv;
                sq += *v * *v;
            }
        }
        let norm = sq.sqrt();
        if !losses.iter().all(|l| l.is_finite()) || !norm.is_finite() {
            return Err(CoreError::Divergence {
                step,
                detail: format!("loss {:?}, gradient norm {}", losses, norm),
            });
        }
        if let Some(c) = cfg.grad_clip {
            if norm > c {
                clipped_steps += 1;
                let k = c / norm;
                for (_, g) in grads.iter_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= k);
                }
            }
        }
        let lr = cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min);
        sgd_step(&mut params, &grads, &mut state, lr, cfg.momentum, cfg.weight_decay)?;
        // keep master weights representable in the working precision
        for (_, p) in params.iter_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.is_finite()) {
            return Err(CoreError::Divergence { step, detail: format!("parameter {} is no longer finite (lr {})", name, lr) });
        }
        curve.push(LossRecord { step, lr, total: losses[0], loc: losses[1], cls: losses[2], reg: losses[3] });
    }
    Ok(TrainOutcome { checkpoint: with_meta(params, model), curve, clipped_steps })
}
