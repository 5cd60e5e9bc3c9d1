use std::path::Path;
use std::process::ExitCode;

use kerromech::error::ErrorKind;
use kerromech_fit::FitError;
use kerromech_oracle::OracleError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] kerromech::Error),

    #[error("{stage}: {source}")]
    Fit {
        stage: String,
        #[source]
        source: FitError,
    },

    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn fit(stage: impl Into<String>) -> impl FnOnce(FitError) -> CliError {
        let stage = stage.into();
        move |source| CliError::Fit { stage, source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) | CliError::Config(_) => ErrorKind::Validation,
            CliError::Io { .. } => ErrorKind::Io,
            CliError::Model(e) => e.kind(),
            CliError::Fit { source, .. } => source.kind(),
            CliError::Oracle(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.kind() {
            ErrorKind::Io => 1,
            ErrorKind::Validation => 2,
            ErrorKind::Convergence => 3,
            ErrorKind::Instability => 4,
        })
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
