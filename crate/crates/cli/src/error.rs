use std::path::Path;

use ckg_core::forecast::ForecastError;
use ckg_core::integrate::IntegrationError;
use ckg_core::kg::KgError;
use ckg_core::kge::KgeError;
use ckg_core::rank::RankError;
use ckg_core::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("missing input artifact {0}; run the earlier stage first")]
    MissingInput(String),
    #[error("{0}")]
    MissingEmbedding(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Integration(IntegrationError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

impl From<IntegrationError> for CliError {
    fn from(e: IntegrationError) -> Self {
        match e {
            IntegrationError::MissingEmbedding(m) => CliError::MissingEmbedding(m),
            other => CliError::Integration(other),
        }
    }
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Stable machine-readable name.
    pub fn name(&self) -> &'static str {
        match self {
            CliError::Config(_) => "InvalidConfig",
            CliError::Io { .. } => "Io",
            CliError::MissingInput(_) => "MissingInput",
            CliError::MissingEmbedding(_) => "MissingEmbedding",
            CliError::Synth(_) => "Synth",
            CliError::Kg(_) => "KnowledgeGraph",
            CliError::Kge(_) => "Embedding",
            CliError::Rank(_) => "Rank",
            CliError::Integration(_) => "Integration",
            CliError::Forecast(_) => "Forecast",
        }
    }

    /// Process exit code.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingEmbedding(_) => 3,
            CliError::MissingInput(_) => 4,
            CliError::Io { .. } => 5,
            CliError::Synth(_) => 10,
            CliError::Kg(_) => 11,
            CliError::Kge(_) => 12,
            CliError::Rank(_) => 13,
            CliError::Integration(_) => 14,
            CliError::Forecast(_) => 15,
        }
    }

    /// Single-line `error=<name> code=<n> message=<text>` report.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error={} code={} message={}", self.name(), self.code(), msg)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
