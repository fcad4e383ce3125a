//! Linear and extended Kalman filters.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2};

use crate::error::FilterError;
use crate::motion::{check_psd, transition, FilterConfig, Gaussian, LinearPosition, MeasurementModel};

pub(crate) fn symmetrize(p: Matrix4<f64>) -> Matrix4<f64> {
    (p + p.transpose()) * 0.5
}

/// Constant-velocity prediction `x <- F x`, `P <- F P F^T + Q`.
pub fn predict(state: &Gaussian, cfg: &FilterConfig) -> Gaussian {
    let f = transition();
    Gaussian { mean: f * state.mean, cov: symmetrize(f * state.cov * f.transpose() + cfg.q) }
}

/// Update with innovation `nu`, measurement Jacobian `h` and noise `r`, in
/// Joseph form so the covariance stays symmetric positive semi-definite.
fn update(pred: &Gaussian, nu: &Vector2<f64>, h: &Matrix2x4<f64>, r: &Matrix2<f64>) -> Result<Gaussian, FilterError> {
    let s = h * pred.cov * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or(FilterError::SingularInnovation)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(FilterError::SingularInnovation);
    }
    let k: Matrix4x2<f64> = pred.cov * h.transpose() * s_inv;
    let ikh = Matrix4::identity() - k * h;
    let cov = ikh * pred.cov * ikh.transpose() + k * r * k.transpose();
    Ok(Gaussian { mean: pred.mean + k * nu, cov: symmetrize(cov) })
}

/// Predict, then update with the position measurement `z` when present.
pub fn kalman_step(state: &Gaussian, z: Option<Vector2<f64>>, cfg: &FilterConfig) -> Result<Gaussian, FilterError> {
    ekf_step(state, z, cfg, &LinearPosition)
}

/// Extended Kalman step: the update linearizes `model` at the predicted
/// mean.
pub fn ekf_step(state: &Gaussian, z: Option<Vector2<f64>>, cfg: &FilterConfig, model: &dyn MeasurementModel) -> Result<Gaussian, FilterError> {
    check_psd(&state.cov, "state covariance")?;
    let pred = predict(state, cfg);
    match z {
        None => Ok(pred),
        Some(z) => {
            let nu = model.residual(&z, &model.h(&pred.mean));
            update(&pred, &nu, &model.jacobian(&pred.mean), &cfg.r)
        }
    }
}
