//! CycleGAN training: losses, batch sampling, Adam, the learning-rate
//! schedule, and the epoch loop with per-epoch checkpoints.

mod losses;
mod optim;
mod runner;

pub use losses::{adv_loss, cycle_loss, disc_loss, total_generator_loss, GeneratorLosses};
pub use optim::Adam;
pub use runner::{
    checkpoint_path, train, train_resume, train_step, train_until, StepReport, TrainState,
};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch} out of range 1..={max}")]
    EpochOutOfRange { epoch: usize, max: usize },
    #[error("feature store has no utterance with at least {min_frames} frames")]
    CorpusExhausted { min_frames: usize },
    #[error("feature store is empty")]
    EmptyStore,
    #[error("non-finite gradient in parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite {what} at epoch {epoch} step {step}; batch ids: {batch_ids:?}")]
    NumericFailure {
        what: String,
        epoch: usize,
        step: usize,
        batch_ids: Vec<String>,
    },
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error(transparent)]
    Checkpoint(#[from] crate::models::CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Full training configuration. Defaults follow the standard recipe:
/// batch 32, sequence length 127, 50 epochs with a 15-epoch plateau then
/// linear decay to 1e-6, Adam(0.5, 0.999), cycle weight 2.5.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub seq_len: usize,
    pub mel_bins: usize,
    pub epochs: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub plateau_epochs: usize,
    pub lr_min: f64,
    pub lambda_cyc: f64,
    pub lambda_adv: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub base_channels: usize,
    pub n_resblocks: usize,
    pub disc_channels: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            seq_len: 127,
            mel_bins: 40,
            epochs: 50,
            lr_gen: 3e-4,
            lr_disc: 1e-4,
            plateau_epochs: 15,
            lr_min: 1e-6,
            lambda_cyc: 2.5,
            lambda_adv: 1.0,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            base_channels: 32,
            n_resblocks: 9,
            disc_channels: vec![64, 128, 256, 512, 1],
        }
    }
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment; unknown keys are
    /// rejected with their line number.
    pub fn parse_str(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or(TrainError::Config {
                line,
                msg: format!("expected `key = value`, got `{stripped}`"),
            })?;
            cfg.apply(key.trim(), value.trim(), line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<TrainConfig> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        fn parse<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
            value.parse().map_err(|_| TrainError::Config {
                line,
                msg: format!("invalid value `{value}` for {key}"),
            })
        }
        match key {
            "batch_size" => self.batch_size = parse(value, line, key)?,
            "seq_len" => self.seq_len = parse(value, line, key)?,
            "mel_bins" => self.mel_bins = parse(value, line, key)?,
            "epochs" => self.epochs = parse(value, line, key)?,
            "lr_gen" => self.lr_gen = parse(value, line, key)?,
            "lr_disc" => self.lr_disc = parse(value, line, key)?,
            "plateau_epochs" => self.plateau_epochs = parse(value, line, key)?,
            "lr_min" => self.lr_min = parse(value, line, key)?,
            "lambda_cyc" => self.lambda_cyc = parse(value, line, key)?,
            "lambda_adv" => self.lambda_adv = parse(value, line, key)?,
            "beta1" => self.beta1 = parse(value, line, key)?,
            "beta2" => self.beta2 = parse(value, line, key)?,
            "eps" => self.eps = parse(value, line, key)?,
            "seed" => self.seed = parse(value, line, key)?,
            "base_channels" => self.base_channels = parse(value, line, key)?,
            "n_resblocks" => self.n_resblocks = parse(value, line, key)?,
            "disc_channels" => {
                self.disc_channels = value
                    .split(',')
                    .map(|v| parse(v.trim(), line, key))
                    .collect::<Result<Vec<usize>>>()?;
            }
            _ => {
                return Err(TrainError::Config {
                    line,
                    msg: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_gen <= 0.0 || self.lr_disc <= 0.0 || self.lr_min <= 0.0 {
            return Err(TrainError::InvalidConfig(
                "learning rates must be positive".into(),
            ));
        }
        if self.plateau_epochs >= self.epochs {
            return Err(TrainError::InvalidConfig(
                "plateau_epochs must be smaller than epochs".into(),
            ));
        }
        if self.lambda_cyc < 0.0 || self.lambda_adv < 0.0 {
            return Err(TrainError::InvalidConfig(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.batch_size == 0 || self.seq_len == 0 || self.mel_bins == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size, seq_len and mel_bins must be positive".into(),
            ));
        }
        if self.disc_channels.last() != Some(&1) {
            return Err(TrainError::InvalidConfig(
                "disc_channels must end in a single score channel".into(),
            ));
        }
        Ok(())
    }

    pub fn generator_spec(&self) -> crate::models::GeneratorSpec {
        crate::models::GeneratorSpec {
            base_channels: self.base_channels,
            n_resblocks: self.n_resblocks,
            zero_init_last: true,
        }
    }
}

/// Learning rate for a 1-based epoch: constant through the plateau, then
/// linear down to `lr_min` at the final epoch.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize, base_lr: f64) -> Result<f64> {
    if epoch < 1 || epoch > cfg.epochs {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            max: cfg.epochs,
        });
    }
    if epoch <= cfg.plateau_epochs {
        return Ok(base_lr);
    }
    let t = (epoch - cfg.plateau_epochs) as f64 / (cfg.epochs - cfg.plateau_epochs) as f64;
    Ok((1.0 - t) * base_lr + t * cfg.lr_min)
}

/// One utterance's features held in memory: frames x mel_bins, row-major
/// by frame, non-speech frames already removed.
#[derive(Debug, Clone)]
pub struct StoredUtterance {
    pub id: String,
    pub frames: usize,
    pub mel_bins: usize,
    pub data: Vec<f64>,
}

/// In-memory feature corpus for one domain.
pub struct FeatureStore {
    utts: Vec<StoredUtterance>,
}

impl FeatureStore {
    pub fn new(utts: Vec<StoredUtterance>) -> FeatureStore {
        FeatureStore { utts }
    }

    pub fn len(&self) -> usize {
        self.utts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utts.is_empty()
    }

    pub fn utterances(&self) -> &[StoredUtterance] {
        &self.utts
    }

    /// Utterances long enough to crop `seq_len` frames from; shorter ones
    /// are skipped (the count is reported so callers can warn).
    pub fn eligible(&self, seq_len: usize) -> (Vec<&StoredUtterance>, usize) {
        let eligible: Vec<&StoredUtterance> =
            self.utts.iter().filter(|u| u.frames >= seq_len).collect();
        let skipped = self.utts.len() - eligible.len();
        (eligible, skipped)
    }
}

/// A batch of random fixed-length crops, shaped `[B, 1, mel_bins, seq_len]`.
pub struct FeatureBatch {
    pub tensor: Tensor,
    pub utt_ids: Vec<String>,
}

/// Draws `cfg.batch_size` independent crops: utterance uniform over the
/// eligible set, offset uniform over valid start frames. No pairing between
/// domains; the two domains are sampled with independent calls.
pub fn sample_batch(
    store: &FeatureStore,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<FeatureBatch> {
    if store.is_empty() {
        return Err(TrainError::EmptyStore);
    }
    let (eligible, _skipped) = store.eligible(cfg.seq_len);
    if eligible.is_empty() {
        return Err(TrainError::CorpusExhausted {
            min_frames: cfg.seq_len,
        });
    }
    let mel = cfg.mel_bins;
    let seq = cfg.seq_len;
    let mut data = vec![0.0; cfg.batch_size * mel * seq];
    let mut utt_ids = Vec::with_capacity(cfg.batch_size);
    for b in 0..cfg.batch_size {
        let utt = eligible[rng.gen_range(0..eligible.len())];
        debug_assert_eq!(utt.mel_bins, mel, "mel dimension mismatch in store");
        let offset = rng.gen_range(0..=utt.frames - seq);
        // transpose frames x mel into the [mel, seq] plane
        let base = b * mel * seq;
        for t in 0..seq {
            let row = &utt.data[(offset + t) * mel..(offset + t + 1) * mel];
            for (m, &v) in row.iter().enumerate() {
                data[base + m * seq + t] = v;
            }
        }
        utt_ids.push(utt.id.clone());
    }
    Ok(FeatureBatch {
        tensor: Tensor::from_vec(&[cfg.batch_size, 1, mel, seq], data)?,
        utt_ids,
    })
}

/// Stable sub-seed derivation (FNV-1a over a tag mixed with the base seed).
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}
