use std::path::{Path, PathBuf};

use rmlab::diagnostics::DiagError;
use rmlab::goldworld::WorldError;
use rmlab::rloosim::RlooError;
use rmlab::rmcore::ModelError;
use rmlab::trainkit::TrainError;

/// Every failure a command can report, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 config, 3 divergence, 4 missing artifact, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Missing(_) => 4,
            CliError::Io { .. } | CliError::Runtime(_) => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<WorldError> for CliError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::Config(_)
            | WorldError::InsufficientPrompts { .. }
            | WorldError::DimMismatch { .. }
            | WorldError::UnknownGenerator(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidDims(_) | ModelError::DimMismatch { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::EmptyTrainSet => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Hook(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<RlooError> for CliError {
    fn from(e: RlooError) -> Self {
        match e {
            RlooError::Config(_) | RlooError::InsufficientPrompts { .. } => CliError::Config(e.to_string()),
            RlooError::Diverged { .. } => CliError::Diverged(e.to_string()),
            RlooError::Model(m) => m.into(),
            RlooError::World(w) => w.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
