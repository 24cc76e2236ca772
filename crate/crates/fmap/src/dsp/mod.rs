//! Audio plumbing and signal processing: WAV I/O, resampling, noise/RIR
//! augmentation, WADA-SNR estimation, log-mel features with energy VAD and
//! sliding centering, and manifest-level corpus ops.

mod augment;
mod features;
mod manifest;
mod resample;
mod wada;
mod wav;

pub use augment::{convolve_rir, mix_noise_at_snr, AugmentSpec, MixEvent, MixStats};
pub use features::{
    energy_vad, logmel_fbank, read_features, sliding_cmn, write_features, FeatureMatrix,
    FBNK_MAGIC,
};
pub use manifest::{
    concat_by_session, filter_top_half_by_snr, read_manifest, write_manifest, ManifestEntry,
};
pub use resample::resample;
pub use wada::wada_snr;
pub use wav::{read_wav, write_wav};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad wav file: {0}")]
    BadWav(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("sample rate mismatch: {a} vs {b}")]
    RateMismatch { a: u32, b: u32 },
    #[error("noise corpus is empty")]
    EmptyNoiseCorpus,
    #[error("signal too short: {n} samples, need at least {min}")]
    TooShort { n: usize, min: usize },
    #[error("signal is all zeros")]
    ZeroSignal,
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("mixed sample rates in session {speaker}/{session}")]
    MixedRates { speaker: String, session: String },
    #[error("bad feature file: {0}")]
    BadFeatureFile(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Mono audio in [-1, 1] at 8 or 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> AudioSignal {
        AudioSignal {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
