use thiserror::Error;

/// Failure of a command, carrying its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Schema(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] convgru::Error),
}

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_DATASET: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Schema(_) => EXIT_VALIDATION,
            CliError::Dataset(_) => EXIT_DATASET,
            CliError::Checkpoint(_) => EXIT_CHECKPOINT,
            CliError::Failed(_) => EXIT_RUNTIME,
            CliError::Core(e) => match e {
                convgru::Error::Dataset { .. } => EXIT_DATASET,
                convgru::Error::Format(_) => EXIT_CHECKPOINT,
                e if e.is_validation() => EXIT_VALIDATION,
                _ => EXIT_RUNTIME,
            },
        }
    }
}
