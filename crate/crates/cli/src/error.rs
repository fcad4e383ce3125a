use gwtrack_baselines::FilterError;
use gwtrack_core::CoreError;
use gwtrack_data::DataError;
use gwtrack_eval::EvalError;
use gwtrack_tensor::CheckpointError;
use thiserror::Error;

/// Process exit codes; part of the command-line contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DIVERGENCE: i32 = 3;
    pub const CHECKPOINT: i32 = 4;
    pub const ALIGNMENT: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("I/O error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn io(path: impl Into<std::path::PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } => exit::IO,
            CliError::Checkpoint(e) => checkpoint_code(e),
            CliError::Core(e) => core_code(e),
            CliError::Data(e) => data_code(e),
            CliError::Filter(_) => exit::USAGE,
            CliError::Eval(e) => match e {
                EvalError::Alignment { .. } | EvalError::UnknownSequence(_) => exit::ALIGNMENT,
                EvalError::Core(c) => core_code(c),
                EvalError::Data(d) => data_code(d),
                EvalError::Spacing(_) | EvalError::Empty(_) => exit::USAGE,
                _ => exit::IO,
            },
        }
    }
}

fn checkpoint_code(e: &CheckpointError) -> i32 {
    match e {
        CheckpointError::Io(_) => exit::IO,
        _ => exit::CHECKPOINT,
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::InvalidParam(_) => exit::USAGE,
        _ => exit::IO,
    }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Divergence { .. } => exit::DIVERGENCE,
        CoreError::Checkpoint(c) => checkpoint_code(c),
        CoreError::Architecture(_) | CoreError::MissingParam(_) => exit::CHECKPOINT,
        CoreError::Data(d) => data_code(d),
        CoreError::Io { .. } => exit::IO,
        _ => exit::USAGE,
    }
}
