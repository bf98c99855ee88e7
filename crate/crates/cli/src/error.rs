use std::io;
use std::path::PathBuf;

use concner_core::bilingen::GenError;
use concner_core::config::ConfigError;
use concner_core::corpus::CorpusError;
use concner_core::eval::EvalError;
use concner_core::trainer::{CheckpointError, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Corpus { path: PathBuf, source: CorpusError },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("label sets differ: checkpoint [{checkpoint}], corpus [{corpus}]")]
    LabelSetMismatch { checkpoint: String, corpus: String },
    #[error("teacher checkpoint {0} changed during distillation")]
    TeacherModified(PathBuf),
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code printed with every error.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "E_CONFIG",
            CliError::Io { .. } => "E_IO",
            CliError::Corpus { .. } => "E_CORPUS",
            CliError::Gen(GenError::InfeasibleConfig(_)) => "E_INFEASIBLE",
            CliError::Gen(GenError::Io { .. }) => "E_IO",
            CliError::Gen(_) => "E_CORPUS",
            CliError::Train(TrainError::NonFiniteLoss { .. }) => "E_NONFINITE",
            CliError::Train(TrainError::ArchitectureMismatch(_)) => "E_ARCH",
            CliError::Train(_) => "E_TRAIN",
            CliError::Checkpoint(CheckpointError::Io { .. }) => "E_IO",
            CliError::Checkpoint(_) => "E_CHECKPOINT",
            CliError::Eval(_) => "E_EVAL",
            CliError::LabelSetMismatch { .. } => "E_LABELS",
            CliError::TeacherModified(_) => "E_TEACHER_MODIFIED",
            CliError::UnknownVariant(_) => "E_USAGE",
        }
    }
}
