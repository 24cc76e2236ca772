//! Verification backend: stats-pooling embeddings, centering + LDA, length
//! normalization, two-covariance PLDA with adaptive S-norm, and EER/minDCF
//! metrics.

mod embed;
mod lda;
mod metrics;
mod plda;

pub use embed::{
    length_normalize, read_embeddings, stats_pool_embed, write_embeddings, Embedding, EMBD_MAGIC,
};
pub use lda::{fit_center_lda, LdaFit};
pub use metrics::{
    adaptive_snorm, compute_eer, compute_min_dcf, read_trials, write_scores, DcfParams, ScoreSet,
    Trial,
};
pub use plda::{fit_plda, plda_score, PldaFit, PldaModel, PldaScorer};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("too few frames: {n}, need at least {min}")]
    TooFewFrames { n: usize, min: usize },
    #[error("zero vector cannot be length-normalized")]
    ZeroVector,
    #[error("bad embedding file: {0}")]
    BadEmbeddingFile(String),
    #[error("inconsistent embedding dimension: {found} vs {expected}")]
    DimMismatch { found: usize, expected: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("lda: {0}")]
    Lda(String),
    #[error("covariance not positive definite")]
    NotPositiveDefinite,
    #[error("cohort has {n} scores, need at least top_k = {top_k} (>= 2)")]
    CohortTooSmall { n: usize, top_k: usize },
    #[error("trial list line {line}: {msg}")]
    TrialList { line: usize, msg: String },
    #[error("metrics need both target and nontarget trials")]
    SingleClass,
}

pub type Result<T> = std::result::Result<T, BackendError>;

#[cfg(test)]
mod tests;
