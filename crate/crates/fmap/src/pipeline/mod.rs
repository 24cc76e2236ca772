//! Pipeline stages behind the `fmap` binary. Every command reads its
//! inputs from disk, writes its outputs to disk, and is bit-deterministic
//! given the same inputs and seed, so stages can be re-run and resumed.

mod scoring;
mod stages;
mod toy;

pub use scoring::{
    cmd_backend, cmd_embed, cmd_eval, cmd_score, load_backend_model, BackendModel, EvalReport,
    ScoreOpts,
};
pub use stages::{
    cmd_augment, cmd_fbank, cmd_map, cmd_prepare, cmd_train, load_feature_store, FbankOpts,
};
pub use toy::{cmd_synth_toy, ToyCorpusSpec};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: missing input {path} (run the {stage} prerequisite first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },
    #[error("{stage}: {msg}")]
    Stage { stage: &'static str, msg: String },
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] crate::models::CheckpointError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    /// 0 success, 2 config error, 3 missing artifact, 4 numeric failure;
    /// anything else is a generic 1.
    pub fn exit_code(&self) -> i32 {
        use crate::training::TrainError;
        match self {
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Train(TrainError::Config { .. })
            | PipelineError::Train(TrainError::InvalidConfig(_)) => 2,
            PipelineError::Dsp(crate::dsp::DspError::Manifest { .. }) => 2,
            PipelineError::Backend(crate::backend::BackendError::TrialList { .. }) => 2,
            PipelineError::Train(TrainError::NumericFailure { .. })
            | PipelineError::Train(TrainError::NonFiniteGradient { .. }) => 4,
            _ => 1,
        }
    }
}

/// Errors if `path` does not exist, naming the stage that needed it.
pub(crate) fn require(stage: &'static str, path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
