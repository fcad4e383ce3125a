//! `gwtrack`: synthesize data, train, track, run baselines, evaluate and
//! benchmark.

mod commands;
mod config_file;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{exit, CliError};

#[derive(Parser, Debug)]
#[command(name = "gwtrack", version, about = "Guidewire-tip tracking on DSA-like sequences")]
pub struct Cli {
    /// Flat key=value file of subcommand flags; explicit flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run every stage on one thread for bit-reproducible output.
    #[arg(long, global = true)]
    pub single_thread: bool,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    PaperSplit,
    Tiny,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Fixed,
    Refresh,
    Gated,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Filter {
    Kf,
    Ekf,
    Ukf,
    Pf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    #[command(args_override_self = true)]
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "paper-split")]
        preset: Preset,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Sequence count for the tiny preset.
        #[arg(long, default_value_t = 5)]
        sequences: usize,
        /// Frames per sequence for the tiny preset.
        #[arg(long, default_value_t = 30)]
        frames: usize,
    },
    /// Train a tracker on the training sequences of a dataset.
    #[command(args_override_self = true)]
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Peak learning rate of the cosine schedule.
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Loss weights `loc,cls,reg`.
        #[arg(long, default_value = "1,1,1", conflicts_with = "grid")]
        lambda: String,
        /// Train all 27 weight triples over {0.5, 1, 2} and keep the best by
        /// validation IoU.
        #[arg(long)]
        grid: bool,
        /// Drop the edge-attention enhancement.
        #[arg(long)]
        no_dean: bool,
        /// Disable rotation, scale and intensity augmentation.
        #[arg(long)]
        no_augment: bool,
        /// Loss curve CSV; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Track test sequences (or one sequence) with a checkpoint.
    #[command(args_override_self = true)]
    Track {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Sequence id; `--out` is then a file, otherwise a directory.
        #[arg(long)]
        seq: Option<String>,
        #[arg(long, value_enum, default_value = "gated")]
        policy: Policy,
        /// Confidence threshold of the gated policy.
        #[arg(long, default_value_t = 0.9)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a classical filter on noisy ground-truth tip positions.
    #[command(args_override_self = true)]
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        filter: Filter,
        /// Measurement noise added to the ground-truth centre, px.
        #[arg(long, default_value_t = 2.0)]
        noise_sigma: f64,
        /// Noise the filter assumes, px; defaults to the injected noise.
        #[arg(long)]
        meas_sigma: Option<f64>,
        /// Process acceleration variance, px^2/frame^4.
        #[arg(long, default_value_t = 0.25)]
        accel_var: f64,
        #[arg(long, default_value_t = 1000)]
        particles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        seq: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score result files against annotations.
    #[command(args_override_self = true)]
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// `[METHOD=]PATH`; a directory holds one `<sequence>.jsonl` per
        /// sequence.
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<String>,
        /// Sequence id for single-file results not named after it.
        #[arg(long)]
        seq: Option<String>,
        /// Report JSON; summary and per-frame CSVs are written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Write annotated frames per method and sequence.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Treat the two results as with and without edge attention and
        /// write a paired comparison table.
        #[arg(long)]
        ablation: bool,
    },
    /// Measure tracking throughput.
    #[command(args_override_self = true)]
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Workers for the headline measurement; defaults to the pool size.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const SUBCOMMANDS: [&str; 6] = ["synth", "train", "track", "baseline", "eval", "bench"];

fn parse_args() -> Result<Cli, CliError> {
    let args: Vec<String> = std::env::args().collect();
    let args = match config_file::config_path(&args) {
        Some(path) => {
            let path = PathBuf::from(path);
            let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
            let pairs = config_file::parse_config(&text, &path)?;
            config_file::inject(&args, config_file::config_flags(&pairs), &SUBCOMMANDS)
        }
        None => args,
    };
    Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
        std::process::exit(code)
    })
}

/// Worker count: 1 in single-thread mode, else `GWTRACK_THREADS` when set.
fn threads(single: bool) -> Result<Option<usize>, CliError> {
    if single {
        return Ok(Some(1));
    }
    match std::env::var("GWTRACK_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("GWTRACK_THREADS must be a positive integer, got {:?}", v))),
        },
        Err(_) => Ok(None),
    }
}

fn run() -> Result<(), CliError> {
    let cli = parse_args()?;
    if let Some(n) = threads(cli.single_thread)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure worker pool: {}", e)))?;
    }
    commands::dispatch(cli.cmd)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
