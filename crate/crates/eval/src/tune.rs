//! Loss-weight grid search scored by tracking IoU on held-out sequences.

use gwtrack_core::{loss_weight_grid, train, LossWeights, Model, ModelConfig, PairSource, TrackConfig, TrainConfig, Tracker};
use gwtrack_data::SequenceDataset;
use gwtrack_tensor::ParamStore;

use crate::error::{EvalError, Result};
use crate::report::{evaluate, MethodResults};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRun {
    pub weights: LossWeights,
    pub val_iou: f64,
    pub val_err_mm: f64,
    /// Total loss of the last training step.
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub runs: Vec<GridRun>,
    /// Index of the run with the highest validation IoU; ties keep the
    /// earlier run.
    pub best: usize,
    pub best_checkpoint: ParamStore,
}

/// Splits off the last `ceil(n / 6)` sequences for validation.
pub fn split_validation(mut data: Vec<SequenceDataset>) -> Result<(Vec<SequenceDataset>, Vec<SequenceDataset>)> {
    if data.len() < 2 {
        return Err(EvalError::Empty("grid search needs at least two training sequences".into()));
    }
    let k = data.len().div_ceil(6);
    let val = data.split_off(data.len() - k);
    Ok((data, val))
}

/// Tracks every validation sequence and reports mean IoU and centre error.
pub fn validate_checkpoint(checkpoint: &ParamStore, track: TrackConfig, val: &[SequenceDataset]) -> Result<(f64, f64)> {
    let model = Model::from_checkpoint(checkpoint)?;
    let tracker = Tracker::new(&model, track)?;
    let sequences = val.iter().map(|ds| Ok((ds.id().to_string(), tracker.track_sequence(ds)?))).collect::<Result<Vec<_>>>()?;
    let r = evaluate(&MethodResults::new("validation", sequences), val)?;
    Ok((r.iou.unwrap_or(0.0), r.mean_err_mm))
}

/// Trains once per weight triple of the grid and keeps the best by
/// validation IoU. `progress` sees each finished run.
pub fn grid_search(
    train_data: &[SequenceDataset],
    val: &[SequenceDataset],
    model: &ModelConfig,
    cfg: &TrainConfig,
    track: TrackConfig,
    mut progress: impl FnMut(usize, &GridRun),
) -> Result<GridOutcome> {
    let mut runs: Vec<GridRun> = Vec::with_capacity(27);
    let mut best: Option<(usize, ParamStore)> = None;
    for (i, weights) in loss_weight_grid().into_iter().enumerate() {
        let run_cfg = TrainConfig { weights, ..cfg.clone() };
        let out = train(PairSource::Sequences(train_data), model, &run_cfg, None)?;
        let (val_iou, val_err_mm) = validate_checkpoint(&out.checkpoint, track, val)?;
        let run = GridRun { weights, val_iou, val_err_mm, final_loss: out.curve.last().map_or(f64::NAN, |r| r.total) };
        progress(i, &run);
        if best.as_ref().is_none_or(|(b, _)| val_iou > runs[*b].val_iou) {
            best = Some((i, out.checkpoint));
        }
        runs.push(run);
    }
    let (best, best_checkpoint) = best.expect("grid is non-empty");
    Ok(GridOutcome { runs, best, best_checkpoint })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gwtrack_data::{generate, SynthConfig};

    #[test]
    fn validation_split_sizes() {
        let data: Vec<_> = generate(&SynthConfig::tiny(1, 7, 2)).unwrap().into_iter().map(|g| g.dataset).collect();
        let (t, v) = split_validation(data).unwrap();
        assert_eq!((t.len(), v.len()), (5, 2));
        assert!(split_validation(Vec::new()).is_err());
    }
}
