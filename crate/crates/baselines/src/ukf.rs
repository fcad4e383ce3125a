//! Unscented Kalman filter.
//!
//! Weighted sums are taken as `y_0 + sum_i W_i (y_i - y_0)` (valid since
//! the mean weights sum to one), which avoids cancellation between the
//! large weights produced by a small spread `alpha`.

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::error::FilterError;
use crate::kalman::symmetrize;
use crate::motion::{check_psd, transition, FilterConfig, Gaussian, MeasurementModel, UkfParams};

const N: usize = 4;

/// Mean and covariance weights of the `2n + 1` sigma points.
pub fn weights(p: &UkfParams) -> (Vec<f64>, Vec<f64>) {
    let n = N as f64;
    let lambda = p.alpha * p.alpha * (n + p.kappa) - n;
    let mut wm = vec![1.0 / (2.0 * (n + lambda)); 2 * N + 1];
    let mut wc = wm.clone();
    wm[0] = lambda / (n + lambda);
    wc[0] = wm[0] + (1.0 - p.alpha * p.alpha + p.beta);
    (wm, wc)
}

/// Sigma points `m`, `m +- sqrt((n + lambda) P)` columns.
pub fn sigma_points(g: &Gaussian, p: &UkfParams) -> Result<Vec<Vector4<f64>>, FilterError> {
    let n = N as f64;
    let lambda = p.alpha * p.alpha * (n + p.kappa) - n;
    if !(n + lambda > 0.0) {
        return Err(FilterError::Config("UKF spread parameters give n + lambda <= 0".into()));
    }
    let chol = (g.cov * (n + lambda))
        .cholesky()
        .ok_or_else(|| FilterError::NotPositiveDefinite("no Cholesky factor for sigma points".into()))?;
    let l = chol.l();
    let mut pts = Vec::with_capacity(2 * N + 1);
    pts.push(g.mean);
    for i in 0..N {
        pts.push(g.mean + l.column(i));
    }
    for i in 0..N {
        pts.push(g.mean - l.column(i));
    }
    Ok(pts)
}

/// Mirrored points `i` and `i + n` share a weight and are summed first so
/// their symmetric rounding cancels.
fn weighted_mean<const D: usize>(ys: &[nalgebra::SVector<f64, D>], wm: &[f64]) -> nalgebra::SVector<f64, D> {
    let mut m = ys[0];
    for i in 1..=N {
        m += ((ys[i] - ys[0]) + (ys[i + N] - ys[0])) * wm[i];
    }
    m
}

/// Unscented estimate of the mean and covariance of `f(x)` for
/// `x ~ g`.
pub fn unscented_transform(g: &Gaussian, p: &UkfParams, f: impl Fn(&Vector4<f64>) -> Vector4<f64>) -> Result<Gaussian, FilterError> {
    let (wm, wc) = weights(p);
    let ys: Vec<Vector4<f64>> = sigma_points(g, p)?.iter().map(f).collect();
    let mean = weighted_mean(&ys, &wm);
    let mut cov = Matrix4::zeros();
    for (y, w) in ys.iter().zip(&wc) {
        let d = y - mean;
        cov += d * d.transpose() * *w;
    }
    Ok(Gaussian { mean, cov: symmetrize(cov) })
}

/// Unscented predict through the constant-velocity transition and, when
/// `z` is present, unscented update through `model`.
pub fn ukf_step(state: &Gaussian, z: Option<Vector2<f64>>, cfg: &FilterConfig, model: &dyn MeasurementModel) -> Result<Gaussian, FilterError> {
    check_psd(&state.cov, "state covariance")?;
    let f = transition();
    let mut pred = unscented_transform(state, &cfg.ukf, |x| f * x)?;
    pred.cov = symmetrize(pred.cov + cfg.q);
    let Some(z) = z else {
        return Ok(pred);
    };
    let (wm, wc) = weights(&cfg.ukf);
    let xs = sigma_points(&pred, &cfg.ukf)?;
    let zs: Vec<Vector2<f64>> = xs.iter().map(|x| model.h(x)).collect();
    // angular components are averaged through residuals against zs[0]
    let mut zhat = zs[0];
    for i in 1..=N {
        zhat += (model.residual(&zs[i], &zs[0]) + model.residual(&zs[i + N], &zs[0])) * wm[i];
    }
    let mut s = cfg.r;
    let mut c = Matrix4x2::zeros();
    for i in 0..xs.len() {
        let dz = model.residual(&zs[i], &zhat);
        s += dz * dz.transpose() * wc[i];
        c += (xs[i] - pred.mean) * dz.transpose() * wc[i];
    }
    let s_inv: Matrix2<f64> = s.try_inverse().ok_or(FilterError::SingularInnovation)?;
    let k = c * s_inv;
    let mean = pred.mean + k * model.residual(&z, &zhat);
    let cov = symmetrize(pred.cov - k * s * k.transpose());
    Ok(Gaussian { mean, cov })
}
