//! Corpus preparation, augmentation, feature extraction, CycleGAN training
//! and target-to-source feature mapping.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::dsp::{
    concat_by_session, energy_vad, filter_top_half_by_snr, logmel_fbank, mix_noise_at_snr,
    read_features, read_manifest, read_wav, resample, sliding_cmn, wada_snr, write_features,
    write_manifest, write_wav, AugmentSpec, FeatureMatrix, ManifestEntry,
};
use crate::models::load_checkpoint;
use crate::training::{
    checkpoint_path, sub_seed, train, train_resume, FeatureStore, StoredUtterance, TrainConfig,
    TrainState,
};

use super::{require, PipelineError, Result};

/// Resamples to `target_rate`, optionally keeps the top half by WADA-SNR,
/// concatenates per (speaker, session), and writes `manifest.tsv` plus the
/// prepared wavs under `out`.
pub fn cmd_prepare(
    manifest: &Path,
    out: &Path,
    target_rate: u32,
    snr_filter: bool,
) -> Result<Vec<ManifestEntry>> {
    require("prepare", manifest)?;
    let entries = read_manifest(manifest)?;
    fs::create_dir_all(out)?;

    let resampled_dir = out.join("resampled");
    let mut resampled = Vec::with_capacity(entries.len());
    for e in &entries {
        require("prepare", &e.path)?;
        if e.sample_rate == target_rate {
            resampled.push(e.clone());
            continue;
        }
        fs::create_dir_all(&resampled_dir)?;
        let audio = resample(&read_wav(&e.path)?, target_rate)?;
        let path = resampled_dir.join(format!("{}.wav", e.utt_id));
        write_wav(&path, &audio)?;
        resampled.push(ManifestEntry {
            sample_rate: target_rate,
            path,
            ..e.clone()
        });
    }

    let kept = if snr_filter {
        let snrs: Vec<f64> = resampled
            .par_iter()
            .map(|e| wada_snr(&read_wav(&e.path)?))
            .collect::<std::result::Result<_, _>>()?;
        filter_top_half_by_snr(&resampled, &snrs)?
    } else {
        resampled
    };

    let prepared = concat_by_session(&kept, &out.join("wavs"))?;
    write_manifest(&out.join("manifest.tsv"), &prepared)?;
    Ok(prepared)
}

/// Adds foreground noise (and optionally a randomly chosen RIR) to every
/// utterance, with a per-utterance RNG derived from (seed, utterance id).
pub fn cmd_augment(
    manifest: &Path,
    noise_manifest: &Path,
    rir_manifest: Option<&Path>,
    out: &Path,
    spec: &AugmentSpec,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    require("augment", manifest)?;
    require("augment", noise_manifest)?;
    let entries = read_manifest(manifest)?;
    let noises = read_manifest(noise_manifest)?
        .iter()
        .map(|e| read_wav(&e.path))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let rirs = match rir_manifest {
        Some(p) => {
            require("augment", p)?;
            read_manifest(p)?
                .iter()
                .map(|e| read_wav(&e.path))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
        None => Vec::new(),
    };

    let wav_dir = out.join("wavs");
    fs::create_dir_all(&wav_dir)?;
    let augmented: Vec<ManifestEntry> = entries
        .par_iter()
        .map(|e| {
            let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(seed, &e.utt_id));
            let mut audio = read_wav(&e.path)?;
            if !rirs.is_empty() {
                let rir = &rirs[rng.gen_range(0..rirs.len())];
                audio = crate::dsp::convolve_rir(&audio, rir)?;
            }
            let (mixed, _stats) = mix_noise_at_snr(&audio, &noises, spec, &mut rng)?;
            let path = wav_dir.join(format!("{}.wav", e.utt_id));
            write_wav(&path, &mixed)?;
            Ok(ManifestEntry {
                path,
                ..e.clone()
            })
        })
        .collect::<Result<_>>()?;
    write_manifest(&out.join("manifest.tsv"), &augmented)?;
    Ok(augmented)
}

#[derive(Debug, Clone)]
pub struct FbankOpts {
    pub n_mels: usize,
    pub vad_offset: f64,
    /// Sliding CMN window in frames; 0 disables CMN.
    pub cmn_window: usize,
}

impl Default for FbankOpts {
    fn default() -> Self {
        FbankOpts {
            n_mels: 40,
            vad_offset: 0.0,
            cmn_window: 300,
        }
    }
}

/// Log-mel features -> energy VAD -> drop non-speech frames -> sliding CMN;
/// one `.fbnk` file per utterance.
pub fn cmd_fbank(manifest: &Path, out: &Path, opts: &FbankOpts) -> Result<()> {
    require("fbank", manifest)?;
    let entries = read_manifest(manifest)?;
    fs::create_dir_all(out)?;
    entries.par_iter().try_for_each(|e| {
        require("fbank", &e.path)?;
        let audio = read_wav(&e.path)?;
        let mut f = logmel_fbank(&audio, &e.utt_id, opts.n_mels)?;
        f.vad = energy_vad(&f.log_energy, opts.vad_offset);
        let speech = f.retain_vad();
        let centered = if opts.cmn_window > 0 {
            sliding_cmn(&speech, opts.cmn_window)
        } else {
            speech
        };
        write_features(&out.join(format!("{}.fbnk", e.utt_id)), &centered)?;
        Ok(())
    })
}

/// Loads every `.fbnk` under `dir`, sorted by file name.
pub fn load_feature_store(stage: &'static str, dir: &Path) -> Result<FeatureStore> {
    require(stage, dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "fbnk"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::MissingArtifact {
            stage,
            path: dir.join("*.fbnk"),
        });
    }
    let utts = paths
        .iter()
        .map(|p| {
            let f = read_features(p)?;
            Ok(StoredUtterance {
                id: f.id,
                frames: f.rows,
                mel_bins: f.cols,
                data: f.data,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStore::new(utts))
}

/// Trains (or resumes) the CycleGAN. A run that already reached the final
/// epoch is a no-op, so re-running the stage is idempotent.
pub fn cmd_train(
    source_features: &Path,
    target_features: &Path,
    out: &Path,
    cfg: &TrainConfig,
) -> Result<()> {
    if checkpoint_path(out, cfg.epochs).exists() {
        return Ok(());
    }
    let source = load_feature_store("train", source_features)?;
    let target = load_feature_store("train", target_features)?;

    let latest = (1..cfg.epochs)
        .rev()
        .map(|e| checkpoint_path(out, e))
        .find(|p| p.exists());
    match latest {
        Some(ckpt) => train_resume(cfg, &source, &target, out, &ckpt)?,
        None => train(cfg, &source, &target, out)?,
    };
    Ok(())
}

/// Maps target-domain features toward the source domain through G_{T->S}.
/// Evaluation-time mapping only ever uses this direction, and never adds
/// noise. Frame counts and mel dimension are preserved exactly.
pub fn cmd_map(
    features: &Path,
    checkpoint: &Path,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<()> {
    require("map", checkpoint)?;
    let state = TrainState::from_checkpoint(cfg, &load_checkpoint(checkpoint)?)?;
    let store = load_feature_store("map", features)?;
    fs::create_dir_all(out)?;

    for utt in store.utterances() {
        let (frames, mel) = (utt.frames, utt.mel_bins);
        if frames < 8 {
            return Err(PipelineError::Stage {
                stage: "map",
                msg: format!("{}: {frames} frames is below the generator minimum of 8", utt.id),
            });
        }
        // frames x mel rows into one [1,1,mel,frames] plane
        let mut plane = vec![0.0; mel * frames];
        for t in 0..frames {
            for m in 0..mel {
                plane[m * frames + t] = utt.data[t * mel + m];
            }
        }
        let x = Tensor::from_vec(&[1, 1, mel, frames], plane).map_err(crate::training::TrainError::from)?;
        let y = state.g_ts.forward(&x)?;
        let mapped = y.to_vec();
        let mut data = vec![0.0; frames * mel];
        for t in 0..frames {
            for m in 0..mel {
                data[t * mel + m] = mapped[m * frames + t];
            }
        }
        write_features(
            &out.join(format!("{}.fbnk", utt.id)),
            &FeatureMatrix {
                id: utt.id.clone(),
                rows: frames,
                cols: mel,
                data,
                vad: vec![true; frames],
                log_energy: vec![],
            },
        )?;
    }
    Ok(())
}
