//! Siamese guidewire-tip tracker: shared backbone, joint attention
//! encoder, directional edge attention, frequency-domain correlation,
//! anchor-free heads, training and the online tracking loop.

pub mod attention;
pub mod backbone;
pub mod config;
pub mod correlator;
pub mod dean;
pub mod error;
pub mod heads;
pub mod loss;
pub mod model;
pub mod params;
pub mod patch;
pub mod tracker;
pub mod trainer;

pub use config::{BackboneConfig, ModelConfig};
pub use error::{CoreError, Result};
pub use heads::{HeadOutputs, HeadVars};
pub use loss::{LossWeights, Labels};
pub use model::Model;
pub use params::Params;
pub use patch::Patch;
pub use tracker::{TrackConfig, Tracker, TrackerState, UpdatePolicy};
pub use trainer::{loss_weight_grid, train, PairSource, TrainConfig, TrainOutcome, TrainingPair};
