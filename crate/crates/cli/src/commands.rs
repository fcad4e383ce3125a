//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use gwtrack_baselines::{run_filter, FilterConfig, FilterKind};
use gwtrack_core::trainer::write_loss_csv;
use gwtrack_core::{LossWeights, Model, ModelConfig, PairSource, TrackConfig, TrainConfig, Tracker, UpdatePolicy};
use gwtrack_data::preset::SynthConfig;
use gwtrack_data::{generate, read_all, write_dataset, write_results, SequenceDataset, Split};
use gwtrack_eval::report::{ablation_csv, curves_csv, summary_csv, write_report_json};
use gwtrack_eval::{
    ablation_rows, evaluate, grid_search, headline_fps, load_method_results, split_validation, tracker_fps, write_overlays,
    EvalReport,
};
use gwtrack_tensor::ParamStore;

use crate::error::CliError;
use crate::{Command, Filter, Policy, Preset};

pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth { out, preset, seed, sequences, frames } => synth(&out, preset, seed, sequences, frames),
        Command::Train { data, out, steps, seed, batch, lr, lambda, grid, no_dean, no_augment, loss_csv } => {
            let cfg = TrainConfig {
                steps,
                seed,
                batch,
                lr_max: lr,
                lr_min: (lr * 1e-2).min(TrainConfig::default().lr_min),
                weights: parse_lambda(&lambda)?,
                augment: if no_augment { gwtrack_core::trainer::AugmentConfig::none() } else { Default::default() },
                ..TrainConfig::default()
            };
            let model = ModelConfig { use_dean: !no_dean, ..ModelConfig::default() };
            let loss_csv = loss_csv.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            train(&data, &out, &model, &cfg, grid, &loss_csv)
        }
        Command::Track { data, ckpt, seq, policy, tau, out } => track(&data, &ckpt, seq.as_deref(), policy, tau, &out),
        Command::Baseline { data, filter, noise_sigma, meas_sigma, accel_var, particles, seed, seq, out } => {
            let sigma = meas_sigma.unwrap_or(noise_sigma).max(MIN_MEAS_SIGMA);
            let cfg = FilterConfig::constant_velocity(accel_var, sigma, particles);
            baseline(&data, filter_kind(filter), noise_sigma, &cfg, seed, seq.as_deref(), &out)
        }
        Command::Eval { data, results, seq, out, overlay, ablation } => {
            eval(&data, &results, seq.as_deref(), &out, overlay.as_deref(), ablation)
        }
        Command::Bench { data, ckpt, warmup, threads, out } => bench(&data, &ckpt, warmup, threads, out.as_deref()),
    }
}

/// Floor on the filter's assumed measurement noise so the unscented filter
/// keeps a positive definite covariance under noise-free input.
const MIN_MEAS_SIGMA: f64 = 0.05;

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_lambda(s: &str) -> Result<LossWeights, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--lambda expects three numbers a,b,c, got {:?}", s)))?;
    match v[..] {
        [a, b, c] => LossWeights::new(a, b, c).map_err(|e| CliError::Usage(e.to_string())),
        _ => Err(CliError::Usage(format!("--lambda expects three numbers a,b,c, got {:?}", s))),
    }
}

fn filter_kind(f: Filter) -> FilterKind {
    match f {
        Filter::Kf => FilterKind::Kf,
        Filter::Ekf => FilterKind::Ekf,
        Filter::Ukf => FilterKind::Ukf,
        Filter::Pf => FilterKind::Pf,
    }
}

fn load_data(dir: &Path) -> Result<Vec<SequenceDataset>, CliError> {
    let data = read_all(dir)?;
    if data.is_empty() {
        return Err(CliError::Usage(format!("no sequences found under {}", dir.display())));
    }
    Ok(data)
}

/// Sequences of `split`, or every sequence not of the other split when none
/// is labelled.
fn select(data: Vec<SequenceDataset>, split: Split) -> Vec<SequenceDataset> {
    if data.iter().any(|d| d.meta.split == split) {
        data.into_iter().filter(|d| d.meta.split == split).collect()
    } else {
        let other = if split == Split::Train { Split::Test } else { Split::Train };
        data.into_iter().filter(|d| d.meta.split != other).collect()
    }
}

/// The named sequence, or the test split.
fn targets(data: Vec<SequenceDataset>, seq: Option<&str>) -> Result<Vec<SequenceDataset>, CliError> {
    match seq {
        Some(id) => {
            let d = data.into_iter().find(|d| d.id() == id).ok_or_else(|| CliError::Usage(format!("no sequence named {}", id)))?;
            Ok(vec![d])
        }
        None => {
            let t = select(data, Split::Test);
            if t.is_empty() {
                return Err(CliError::Usage("no test sequences; pass --seq".into()));
            }
            Ok(t)
        }
    }
}

/// Writes per-sequence results: to `out` itself for a single named
/// sequence, else to `out/<id>.jsonl`.
fn write_outputs(out: &Path, single: bool, runs: &[(String, Vec<gwtrack_data::TrackRecord>)]) -> Result<(), CliError> {
    if single {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        write_results(out, &runs[0].1)?;
    } else {
        fs::create_dir_all(out).map_err(CliError::io(out))?;
        for (id, recs) in runs {
            write_results(&out.join(format!("{}.jsonl", id)), recs)?;
        }
    }
    Ok(())
}

fn synth(out: &Path, preset: Preset, seed: u64, sequences: usize, frames: usize) -> Result<(), CliError> {
    let cfg = match preset {
        Preset::PaperSplit => SynthConfig::paper_split(seed),
        Preset::Tiny => {
            if sequences < 2 || frames == 0 {
                return Err(CliError::Usage("the tiny preset needs at least 2 sequences and 1 frame".into()));
            }
            SynthConfig::tiny(seed, sequences, frames)
        }
    };
    let seqs = generate(&cfg)?;
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    for s in &seqs {
        write_dataset(&s.dataset, out)?;
    }
    let test = seqs.iter().filter(|s| s.dataset.meta.split == Split::Test).count();
    println!("wrote {} sequences ({} train, {} test) to {}", seqs.len(), seqs.len() - test, test, out.display());
    Ok(())
}

fn train(data: &Path, out: &Path, model: &ModelConfig, cfg: &TrainConfig, grid: bool, loss_csv: &Path) -> Result<(), CliError> {
    let train_data = select(load_data(data)?, Split::Train);
    if train_data.is_empty() {
        return Err(CliError::Usage("no training sequences".into()));
    }
    if grid {
        let (tr, val) = split_validation(train_data)?;
        eprintln!("grid search: {} training and {} validation sequences", tr.len(), val.len());
        let outcome = grid_search(&tr, &val, model, cfg, TrackConfig::default(), |i, r| {
            eprintln!(
                "run {:2}/27 lambda=({}, {}, {}) val_iou={:.4} val_err={:.4} mm final_loss={:.4}",
                i + 1,
                r.weights.loc,
                r.weights.cls,
                r.weights.reg,
                r.val_iou,
                r.val_err_mm,
                r.final_loss
            )
        })?;
        let mut csv = String::from("loc,cls,reg,val_iou,val_err_mm,final_loss\n");
        for r in &outcome.runs {
            csv.push_str(&format!("{},{},{},{},{},{}\n", r.weights.loc, r.weights.cls, r.weights.reg, r.val_iou, r.val_err_mm, r.final_loss));
        }
        let grid_csv = with_suffix(out, ".grid.csv");
        fs::write(&grid_csv, csv).map_err(CliError::io(&grid_csv))?;
        outcome.best_checkpoint.save(out)?;
        let b = &outcome.runs[outcome.best];
        println!(
            "best lambda=({}, {}, {}) val_iou={:.4}; checkpoint {}, summary {}",
            b.weights.loc,
            b.weights.cls,
            b.weights.reg,
            b.val_iou,
            out.display(),
            grid_csv.display()
        );
        return Ok(());
    }
    let outcome = gwtrack_core::train(PairSource::Sequences(&train_data), model, cfg, None)?;
    outcome.checkpoint.save(out)?;
    write_loss_csv(loss_csv, &outcome.curve)?;
    let last = outcome.curve.last().map_or(f64::NAN, |r| r.total);
    println!(
        "trained {} steps on {} sequences: final loss {:.4}, {} clipped steps; checkpoint {}, loss curve {}",
        cfg.steps,
        train_data.len(),
        last,
        outcome.clipped_steps,
        out.display(),
        loss_csv.display()
    );
    Ok(())
}

fn track(data: &Path, ckpt: &Path, seq: Option<&str>, policy: Policy, tau: f64, out: &Path) -> Result<(), CliError> {
    let model = Model::from_checkpoint(&ParamStore::load(ckpt)?)?;
    let policy = match policy {
        Policy::Fixed => UpdatePolicy::Fixed,
        Policy::Refresh => UpdatePolicy::Refresh,
        Policy::Gated => UpdatePolicy::Gated(tau),
    };
    let tracker = Tracker::new(&model, TrackConfig { policy, ..TrackConfig::default() })?;
    let seqs = targets(load_data(data)?, seq)?;
    let runs = seqs.iter().map(|ds| Ok((ds.id().to_string(), tracker.track_sequence(ds)?))).collect::<Result<Vec<_>, CliError>>()?;
    write_outputs(out, seq.is_some(), &runs)?;
    println!("tracked {} sequences ({} frames) to {}", runs.len(), runs.iter().map(|r| r.1.len()).sum::<usize>(), out.display());
    Ok(())
}

fn baseline(data: &Path, kind: FilterKind, noise: f64, cfg: &FilterConfig, seed: u64, seq: Option<&str>, out: &Path) -> Result<(), CliError> {
    let seqs = targets(load_data(data)?, seq)?;
    let runs = seqs.iter().map(|ds| Ok((ds.id().to_string(), run_filter(kind, ds, noise, cfg, seed)?))).collect::<Result<Vec<_>, CliError>>()?;
    write_outputs(out, seq.is_some(), &runs)?;
    println!("ran {} on {} sequences to {}", kind.as_str(), runs.len(), out.display());
    Ok(())
}

fn eval(data: &Path, results: &[String], seq: Option<&str>, out: &Path, overlay: Option<&Path>, ablation: bool) -> Result<(), CliError> {
    let datasets = load_data(data)?;
    let methods = results.iter().map(|r| load_method_results(r, seq)).collect::<Result<Vec<_>, _>>()?;
    let reports = methods.iter().map(|m| evaluate(m, &datasets)).collect::<Result<Vec<EvalReport>, _>>()?;
    write_report_json(out, &reports)?;
    let table = summary_csv(&reports)?;
    let (summary_path, curves_path) = (out.with_extension("csv"), with_suffix(&out.with_extension(""), "_curves.csv"));
    fs::write(&summary_path, &table).map_err(CliError::io(&summary_path))?;
    fs::write(&curves_path, curves_csv(&reports)?).map_err(CliError::io(&curves_path))?;
    if ablation {
        let [a, b] = &reports[..] else {
            return Err(CliError::Usage("--ablation needs exactly two results: with, then without edge attention".into()));
        };
        let path = with_suffix(&out.with_extension(""), "_ablation.csv");
        fs::write(&path, ablation_csv(&ablation_rows(a, b))?).map_err(CliError::io(&path))?;
    }
    if let Some(dir) = overlay {
        for m in &methods {
            for (id, recs) in &m.sequences {
                let ds = datasets.iter().find(|d| d.id() == id).expect("evaluated sequences exist");
                write_overlays(&dir.join(&m.method).join(id), ds, recs)?;
            }
        }
    }
    print!("{}", table);
    Ok(())
}

fn bench(data: &Path, ckpt: &Path, warmup: usize, threads: Option<usize>, out: Option<&Path>) -> Result<(), CliError> {
    let model = Model::from_checkpoint(&ParamStore::load(ckpt)?)?;
    let seqs = targets(load_data(data)?, None)?;
    let cfg = TrackConfig::default();
    let (mut frames, mut seconds) = (0, 0.0);
    for ds in &seqs {
        let m = tracker_fps(&model, cfg, ds, warmup)?;
        frames += m.frames;
        seconds += m.seconds;
    }
    let single = frames as f64 / seconds;
    let threads = threads.unwrap_or_else(rayon::current_num_threads);
    let head = headline_fps(&model, cfg, &seqs, threads)?;
    println!("single-thread: {:.1} FPS over {} frames", single, frames);
    println!("{}: {:.1} FPS over {} frames", head.mode, head.fps, head.frames);
    if let Some(path) = out {
        let v = serde_json::json!({
            "single_thread_fps": single,
            "single_thread_frames": frames,
            "headline_fps": head.fps,
            "headline_threads": threads,
            "headline_frames": head.frames,
        });
        fs::write(path, serde_json::to_string_pretty(&v).expect("json value") + "\n").map_err(CliError::io(path))?;
    }
    Ok(())
}
