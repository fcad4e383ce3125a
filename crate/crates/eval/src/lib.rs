//! Accuracy metrics, throughput benchmarks, comparison reports and
//! overlays for tracking results.

pub mod bench;
pub mod error;
pub mod metrics;
pub mod overlay;
pub mod report;
pub mod tune;

pub use bench::{filter_fps, fps_after_warmup, headline_fps, tracker_fps, FpsMeasurement, FpsMode};
pub use error::EvalError;
pub use metrics::{center_error_mm, iou, Summary};
pub use overlay::{render_overlay, write_overlays};
pub use report::{ablation_rows, evaluate, load_method_results, AblationRow, EvalReport, MethodResults};
pub use tune::{grid_search, split_validation, validate_checkpoint, GridOutcome, GridRun};
