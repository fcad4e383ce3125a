//! Benchmark front end: filters fed with noisy ground-truth tip positions.

use std::time::Instant;

use gwtrack_data::{BBox, SequenceDataset, TrackRecord};
use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::FilterError;
use crate::kalman::{ekf_step, kalman_step};
use crate::motion::{FilterConfig, Gaussian, LinearPosition};
use crate::particle::{particle_step, ParticleSet};
use crate::ukf::ukf_step;

/// Prior velocity variance, px^2/frame^2.
const VEL_VAR: f64 = 25.0;
/// Floor on the prior position variance so the initial belief stays
/// positive definite under noise-free measurements.
const MIN_POS_VAR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Kf,
    Ekf,
    Ukf,
    Pf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::Kf, FilterKind::Ekf, FilterKind::Ukf, FilterKind::Pf];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "kf" => Some(FilterKind::Kf),
            "ekf" => Some(FilterKind::Ekf),
            "ukf" => Some(FilterKind::Ukf),
            "pf" => Some(FilterKind::Pf),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Kf => "kf",
            FilterKind::Ekf => "ekf",
            FilterKind::Ukf => "ukf",
            FilterKind::Pf => "pf",
        }
    }
}

enum Belief {
    Gaussian(Gaussian),
    Particles(ParticleSet),
}

/// Measurements `gt centre + N(0, sigma^2)` per axis for frames `1..`, drawn
/// from `seed` so every filter sees the same sequence.
pub fn noisy_measurements(ds: &SequenceDataset, noise_sigma: f64, seed: u64) -> Result<Vec<Vector2<f64>>, FilterError> {
    let normal = Normal::new(0.0, noise_sigma)
        .map_err(|_| FilterError::Config(format!("measurement noise {} must be finite and non-negative", noise_sigma)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ds
        .annotations
        .iter()
        .map(|a| Vector2::new(a.bbox.cx + normal.sample(&mut rng), a.bbox.cy + normal.sample(&mut rng)))
        .collect())
}

/// Runs one filter over a sequence. Frame 0 reports the ground-truth box;
/// later frames report the filtered centre with the initial box size.
pub fn run_filter(
    kind: FilterKind,
    ds: &SequenceDataset,
    noise_sigma: f64,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<Vec<TrackRecord>, FilterError> {
    cfg.validate()?;
    if ds.annotations.is_empty() {
        return Err(FilterError::Config(format!("sequence {} has no annotations", ds.id())));
    }
    let z = noisy_measurements(ds, noise_sigma, seed)?;
    let b0 = ds.gt(0);
    let prior = Gaussian::at_position(b0.cx, b0.cy, (noise_sigma * noise_sigma).max(MIN_POS_VAR), VEL_VAR);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7066_0000);
    let mut belief = match kind {
        FilterKind::Pf => Belief::Particles(ParticleSet::from_gaussian(&prior, cfg.particles, &mut rng)?),
        _ => Belief::Gaussian(prior),
    };
    let mut out = Vec::with_capacity(z.len());
    out.push(TrackRecord::new(0, &b0, 1.0, 0.0));
    for (i, zi) in z.iter().enumerate().skip(1) {
        let t = Instant::now();
        let m = Some(*zi);
        let (x, y) = match &mut belief {
            Belief::Gaussian(g) => {
                *g = match kind {
                    FilterKind::Kf => kalman_step(g, m, cfg)?,
                    FilterKind::Ekf => ekf_step(g, m, cfg, &LinearPosition)?,
                    _ => ukf_step(g, m, cfg, &LinearPosition)?,
                };
                g.position()
            }
            Belief::Particles(p) => {
                *p = particle_step(p, m, cfg, &LinearPosition, &mut rng)?;
                let mean = p.mean();
                (mean[0], mean[1])
            }
        };
        let b = BBox { cx: x, cy: y, w: b0.w, h: b0.h };
        out.push(TrackRecord::new(i, &b, 1.0, t.elapsed().as_secs_f64() * 1e3));
    }
    Ok(out)
}
