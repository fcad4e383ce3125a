//! State, noise and measurement models shared by all filters.
//!
//! The state is `[x, y, vx, vy]` in pixels and pixels per frame.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, SymmetricEigen, Vector2, Vector4};

use crate::error::FilterError;

/// Gaussian belief over the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl Gaussian {
    pub fn new(mean: Vector4<f64>, cov: Matrix4<f64>) -> Self {
        Gaussian { mean, cov }
    }

    /// Belief at a measured position with unknown velocity.
    pub fn at_position(x: f64, y: f64, pos_var: f64, vel_var: f64) -> Self {
        Gaussian {
            mean: Vector4::new(x, y, 0.0, 0.0),
            cov: Matrix4::from_diagonal(&Vector4::new(pos_var, pos_var, vel_var, vel_var)),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }
}

/// Unscented transform spread parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        UkfParams { alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    /// Process noise covariance.
    pub q: Matrix4<f64>,
    /// Measurement noise covariance.
    pub r: Matrix2<f64>,
    pub particles: usize,
    pub ukf: UkfParams,
}

impl FilterConfig {
    /// White-noise acceleration process model with spectral density
    /// `accel_var` and isotropic measurement noise `meas_sigma`.
    pub fn constant_velocity(accel_var: f64, meas_sigma: f64, particles: usize) -> Self {
        let (a, b, c) = (0.25 * accel_var, 0.5 * accel_var, accel_var);
        #[rustfmt::skip]
        let q = Matrix4::new(
            a, 0.0, b, 0.0,
            0.0, a, 0.0, b,
            b, 0.0, c, 0.0,
            0.0, b, 0.0, c,
        );
        FilterConfig { q, r: Matrix2::identity() * meas_sigma * meas_sigma, particles, ukf: UkfParams::default() }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        check_psd(&self.q, "process noise")?;
        check_psd2(&self.r, "measurement noise")?;
        if self.particles == 0 {
            return Err(FilterError::Config("particle count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Constant-velocity transition.
pub fn transition() -> Matrix4<f64> {
    #[rustfmt::skip]
    let f = Matrix4::new(
        1.0, 0.0, 1.0, 0.0,
        0.0, 1.0, 0.0, 1.0,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    );
    f
}

fn tolerance(scale: f64) -> f64 {
    1e-9 * scale.max(1.0)
}

/// Symmetric (to a relative `1e-9`) with eigenvalues no smaller than
/// `-1e-9` relative.
pub fn check_psd(p: &Matrix4<f64>, what: &str) -> Result<(), FilterError> {
    let scale = p.amax();
    if !p.iter().all(|v| v.is_finite()) || (p - p.transpose()).amax() > tolerance(scale) {
        return Err(FilterError::NotPsd(format!("{} is not symmetric", what)));
    }
    let min = SymmetricEigen::new(*p).eigenvalues.min();
    if min < -tolerance(scale) {
        return Err(FilterError::NotPsd(format!("{} has eigenvalue {:e}", what, min)));
    }
    Ok(())
}

pub(crate) fn check_psd2(p: &Matrix2<f64>, what: &str) -> Result<(), FilterError> {
    let scale = p.amax();
    if !p.iter().all(|v| v.is_finite()) || (p - p.transpose()).amax() > tolerance(scale) {
        return Err(FilterError::NotPsd(format!("{} is not symmetric", what)));
    }
    let min = SymmetricEigen::new(*p).eigenvalues.min();
    if min < -tolerance(scale) {
        return Err(FilterError::NotPsd(format!("{} has eigenvalue {:e}", what, min)));
    }
    Ok(())
}

/// A two-dimensional measurement `z = h(x) + noise`.
pub trait MeasurementModel {
    fn h(&self, x: &Vector4<f64>) -> Vector2<f64>;
    fn jacobian(&self, x: &Vector4<f64>) -> Matrix2x4<f64>;
    /// Innovation `z - zhat`, wrapped for angular components.
    fn residual(&self, z: &Vector2<f64>, zhat: &Vector2<f64>) -> Vector2<f64> {
        z - zhat
    }
}

/// Direct observation of the position.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearPosition;

impl LinearPosition {
    pub fn matrix() -> Matrix2x4<f64> {
        Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    }
}

impl MeasurementModel for LinearPosition {
    fn h(&self, x: &Vector4<f64>) -> Vector2<f64> {
        LinearPosition::matrix() * x
    }

    fn jacobian(&self, _x: &Vector4<f64>) -> Matrix2x4<f64> {
        LinearPosition::matrix()
    }
}

/// Range and bearing of the position seen from `origin`.
#[derive(Clone, Copy, Debug)]
pub struct RangeBearing {
    pub origin: (f64, f64),
}

impl MeasurementModel for RangeBearing {
    fn h(&self, x: &Vector4<f64>) -> Vector2<f64> {
        let (dx, dy) = (x[0] - self.origin.0, x[1] - self.origin.1);
        Vector2::new(dx.hypot(dy), dy.atan2(dx))
    }

    fn jacobian(&self, x: &Vector4<f64>) -> Matrix2x4<f64> {
        let (dx, dy) = (x[0] - self.origin.0, x[1] - self.origin.1);
        let r2 = dx * dx + dy * dy;
        let r = r2.sqrt();
        Matrix2x4::new(dx / r, dy / r, 0.0, 0.0, -dy / r2, dx / r2, 0.0, 0.0)
    }

    fn residual(&self, z: &Vector2<f64>, zhat: &Vector2<f64>) -> Vector2<f64> {
        let mut d = z - zhat;
        d[1] = (d[1] + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        d
    }
}
