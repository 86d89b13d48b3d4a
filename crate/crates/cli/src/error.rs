use std::io;
use std::path::PathBuf;

use ados_core::assessment::AssessmentError;
use ados_core::corpus::CorpusError;
use ados_core::features::FeatureError;
use ados_core::fusion::FusionError;
use ados_core::prompt::PromptError;
use ados_core::rules::RuleError;
use ados_core::synth::SynthError;
use ados_core::transcript::TranscriptError;
use ados_gateway::GatewayError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("stage `{stage}` has not completed in this run ({} missing); run `ados {hint}` first", artifact.display())]
    MissingStage {
        stage: &'static str,
        hint: &'static str,
        artifact: PathBuf,
    },
    #[error("run directory {}: {reason}", dir.display())]
    RunMismatch { dir: PathBuf, reason: String },
    #[error("{failed} of {total} {stage} task(s) failed; see the log above")]
    TaskFailures {
        stage: &'static str,
        failed: usize,
        total: usize,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Assessment(#[from] AssessmentError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Json { path, source }
    }

    /// 3 when the run finished but some sessions failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::TaskFailures { .. } => 3,
            _ => 1,
        }
    }
}
