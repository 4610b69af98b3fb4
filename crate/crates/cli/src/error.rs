use std::path::{Path, PathBuf};

use survhte_core::data::ValidationError;
use survhte_core::learners::LearnerError;
use survhte_core::pipeline::PipelineError;
use thiserror::Error;

/// Errors surfaced by the command-line tool. Validation problems exit with
/// code 1, everything else with code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: Box<CliError> },
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Input { source, .. } => source.exit_code(),
            CliError::Runtime(_) | CliError::Io { .. } => 2,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        CliError::Input { path: path.to_path_buf(), source: Box::new(self) }
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Settings(m) => CliError::Validation(m),
            PipelineError::Survival(survhte_core::survival::SurvivalError::Learner(LearnerError::InvalidSpec(m))) => {
                CliError::Validation(m)
            }
            PipelineError::Dgp(survhte_core::dgp::DgpError::InvalidParams(m)) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::from(PipelineError::from(e))
            }
        })*
    };
}

runtime_from!(
    survhte_core::survival::SurvivalError,
    survhte_core::importance::ImportanceError,
    survhte_core::tmle::TmleError,
    survhte_core::dgp::DgpError
);

impl From<survhte_core::cate::CateError> for CliError {
    fn from(e: survhte_core::cate::CateError) -> Self {
        use survhte_core::cate::CateError;
        match e {
            CateError::InvalidBreaks(_) | CateError::InvalidFeature { .. } => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
