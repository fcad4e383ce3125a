//! Bootstrap particle filter with systematic resampling.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::FilterError;
use crate::motion::{transition, FilterConfig, Gaussian, MeasurementModel};

/// Residual norm below which a noise-free measurement counts as matched.
const EXACT_MATCH: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Vector4<f64>>,
    /// Normalized importance weights.
    pub weights: Vec<f64>,
    /// Set when every likelihood vanished and the weights were reset to
    /// uniform.
    pub degenerate: bool,
    /// Whether the last step resampled.
    pub resampled: bool,
}

/// Symmetric square root of a positive semi-definite matrix; negative
/// rounding eigenvalues are clipped to zero.
fn psd_sqrt(m: &Matrix4<f64>) -> Matrix4<f64> {
    let e = SymmetricEigen::new(*m);
    let d = Matrix4::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

fn sample_gaussian(root: &Matrix4<f64>, rng: &mut impl Rng) -> Vector4<f64> {
    let n = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    root * n
}

impl ParticleSet {
    /// `n` equally weighted draws from `g`.
    pub fn from_gaussian(g: &Gaussian, n: usize, rng: &mut impl Rng) -> Result<Self, FilterError> {
        if n == 0 {
            return Err(FilterError::Config("particle count must be at least 1".into()));
        }
        crate::motion::check_psd(&g.cov, "initial covariance")?;
        let root = psd_sqrt(&g.cov);
        let particles = (0..n).map(|_| g.mean + sample_gaussian(&root, rng)).collect();
        Ok(ParticleSet { particles, weights: vec![1.0 / n as f64; n], degenerate: false, resampled: false })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn mean(&self) -> Vector4<f64> {
        self.particles.iter().zip(&self.weights).fold(Vector4::zeros(), |acc, (p, w)| acc + p * *w)
    }

    pub fn covariance(&self) -> Matrix4<f64> {
        let m = self.mean();
        self.particles.iter().zip(&self.weights).fold(Matrix4::zeros(), |acc, (p, w)| {
            let d = p - m;
            acc + d * d.transpose() * *w
        })
    }

    /// `1 / sum(w^2)`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Log-likelihood of residual `d` under `N(0, r)`, up to a constant.
/// Singular `r` means noise-free measurements: only exact matches count.
fn log_likelihood(d: &Vector2<f64>, r_inv: Option<&Matrix2<f64>>) -> f64 {
    match r_inv {
        Some(ri) => -0.5 * (d.transpose() * ri * d)[(0, 0)],
        None if d.norm() <= EXACT_MATCH => 0.0,
        None => f64::NEG_INFINITY,
    }
}

/// Systematic resampling with one uniform offset.
fn systematic_resample(set: &ParticleSet, rng: &mut impl Rng) -> Vec<Vector4<f64>> {
    let n = set.len();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = set.weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while u > cum && i + 1 < n {
            i += 1;
            cum += set.weights[i];
        }
        out.push(set.particles[i]);
    }
    out
}

/// Propagates every particle through the transition plus process noise,
/// reweights by the measurement likelihood, and resamples systematically
/// when the effective sample size falls below half the particle count.
pub fn particle_step(
    set: &ParticleSet,
    z: Option<Vector2<f64>>,
    cfg: &FilterConfig,
    model: &dyn MeasurementModel,
    rng: &mut impl Rng,
) -> Result<ParticleSet, FilterError> {
    if set.is_empty() || set.weights.len() != set.len() {
        return Err(FilterError::Config("particle set is empty or inconsistent".into()));
    }
    cfg.validate()?;
    let f = transition();
    let root = psd_sqrt(&cfg.q);
    let noisy = cfg.q.amax() > 0.0;
    let particles: Vec<Vector4<f64>> =
        set.particles.iter().map(|p| if noisy { f * p + sample_gaussian(&root, rng) } else { f * p }).collect();
    let mut out = ParticleSet { particles, weights: set.weights.clone(), degenerate: false, resampled: false };
    let Some(z) = z else {
        return Ok(out);
    };
    let r_inv = if cfg.r.amax() > 0.0 { cfg.r.try_inverse() } else { None };
    let logw: Vec<f64> = out
        .particles
        .iter()
        .zip(&set.weights)
        .map(|(p, w)| w.ln() + log_likelihood(&model.residual(&z, &model.h(p)), r_inv.as_ref()))
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let n = out.len();
        out.weights = vec![1.0 / n as f64; n];
        out.degenerate = true;
    } else {
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        out.weights = w.into_iter().map(|v| v / total).collect();
    }
    if out.effective_size() < out.len() as f64 / 2.0 {
        out.particles = systematic_resample(&out, rng);
        let n = out.len();
        out.weights = vec![1.0 / n as f64; n];
        out.resampled = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::LinearPosition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn systematic_resampling_follows_weights() {
        let set = ParticleSet {
            particles: (0..4).map(|i| Vector4::new(i as f64, 0.0, 0.0, 0.0)).collect(),
            weights: vec![0.5, 0.0, 0.25, 0.25],
            degenerate: false,
            resampled: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = systematic_resample(&set, &mut rng);
        let xs: Vec<f64> = out.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.0, 0.0, 2.0, 3.0]);
    }

    #[test]
    fn vanished_likelihood_resets_to_uniform() {
        let mut cfg = FilterConfig::constant_velocity(0.0, 0.0, 3);
        cfg.r = Matrix2::zeros();
        let g = Gaussian::new(Vector4::new(1.0, 1.0, 0.0, 0.0), Matrix4::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = ParticleSet::from_gaussian(&g, 3, &mut rng).unwrap();
        let out = particle_step(&set, Some(Vector2::new(5.0, 5.0)), &cfg, &LinearPosition, &mut rng).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.weights, vec![1.0 / 3.0; 3]);
    }
}
