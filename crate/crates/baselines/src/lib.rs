//! Classical tip-position filters on a constant-velocity motion model.

pub mod error;
pub mod frontend;
pub mod kalman;
pub mod motion;
pub mod particle;
pub mod ukf;

pub use error::FilterError;
pub use frontend::{noisy_measurements, run_filter, FilterKind};
pub use kalman::{ekf_step, kalman_step};
pub use motion::{FilterConfig, Gaussian, LinearPosition, MeasurementModel, RangeBearing, UkfParams};
pub use particle::{particle_step, ParticleSet};
pub use ukf::{sigma_points, ukf_step, unscented_transform};
