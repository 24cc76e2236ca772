//! Log-mel filter-bank features (25 ms frames, 10 ms shift, snip-edges),
//! energy VAD, sliding centering, and the binary feature-file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{AudioSignal, DspError, Result};

pub const FBNK_MAGIC: &[u8; 4] = b"FBNK";
const FBNK_VERSION: u32 = 1;

const FRAME_MS: usize = 25;
const SHIFT_MS: usize = 10;
const PREEMPH: f64 = 0.97;
const MEL_LOW_HZ: f64 = 20.0;
const ENERGY_FLOOR: f64 = 1e-10;

/// Frames x mel log energies with a per-frame VAD mask. `log_energy` keeps
/// the raw per-frame log energy used by the VAD (not serialized).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    /// row-major, rows x cols
    pub data: Vec<f64>,
    pub vad: Vec<bool>,
    pub log_energy: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    /// Copies only VAD-positive frames; the mask of the result is all true.
    pub fn retain_vad(&self) -> FeatureMatrix {
        let mut data = Vec::new();
        let mut log_energy = Vec::new();
        for t in 0..self.rows {
            if self.vad[t] {
                data.extend_from_slice(self.row(t));
                if t < self.log_energy.len() {
                    log_energy.push(self.log_energy[t]);
                }
            }
        }
        let rows = data.len() / self.cols.max(1);
        FeatureMatrix {
            id: self.id.clone(),
            rows,
            cols: self.cols,
            data,
            vad: vec![true; rows],
            log_energy,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

/// 40-dim log-mel features. Per frame: DC removal, raw log energy (for the
/// VAD), pre-emphasis 0.97, Hamming window, power spectrum, triangular mel
/// bank from 20 Hz to Nyquist, natural log with floor 1e-10.
pub fn logmel_fbank(x: &AudioSignal, id: &str, n_mels: usize) -> Result<FeatureMatrix> {
    let rate = x.sample_rate as usize;
    let frame_len = rate * FRAME_MS / 1000;
    let shift = rate * SHIFT_MS / 1000;
    if x.len() < frame_len {
        return Err(DspError::TooShort {
            n: x.len(),
            min: frame_len,
        });
    }
    let n_frames = 1 + (x.len() - frame_len) / shift;
    let nfft = frame_len.next_power_of_two();
    let n_bins = nfft / 2 + 1;
    let bank = mel_bank(n_mels, n_bins, nfft, x.sample_rate);

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let window: Vec<f64> = (0..frame_len)
        .map(|i| {
            0.54 - 0.46
                * (2.0 * std::f64::consts::PI * i as f64 / (frame_len - 1) as f64).cos()
        })
        .collect();

    let mut data = vec![0.0; n_frames * n_mels];
    let mut log_energy = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for t in 0..n_frames {
        let mut frame: Vec<f64> = x.samples[t * shift..t * shift + frame_len].to_vec();
        let mean = frame.iter().sum::<f64>() / frame_len as f64;
        for v in &mut frame {
            *v -= mean;
        }
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        log_energy.push(energy.max(ENERGY_FLOOR).ln());

        for i in (1..frame_len).rev() {
            frame[i] -= PREEMPH * frame[i - 1];
        }
        frame[0] -= PREEMPH * frame[0];

        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < frame_len {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);

        for (m, triangle) in bank.iter().enumerate() {
            let mut e = 0.0;
            for &(bin, w) in triangle {
                e += w * buf[bin].norm_sqr();
            }
            data[t * n_mels + m] = e.max(ENERGY_FLOOR).ln();
        }
    }

    Ok(FeatureMatrix {
        id: id.to_string(),
        rows: n_frames,
        cols: n_mels,
        data,
        vad: vec![true; n_frames],
        log_energy,
    })
}

/// Sparse triangles in mel space: per filter, the (fft bin, weight) pairs.
fn mel_bank(n_mels: usize, n_bins: usize, nfft: usize, rate: u32) -> Vec<Vec<(usize, f64)>> {
    let mel_lo = hz_to_mel(MEL_LOW_HZ);
    let mel_hi = hz_to_mel(rate as f64 / 2.0);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64)
        .collect();
    let mut bank = vec![Vec::new(); n_mels];
    for bin in 0..n_bins {
        let mel = hz_to_mel(bin as f64 * rate as f64 / nfft as f64);
        for m in 0..n_mels {
            let (l, c, r) = (centers[m], centers[m + 1], centers[m + 2]);
            if mel > l && mel < r {
                let w = if mel <= c { (mel - l) / (c - l) } else { (r - mel) / (r - c) };
                bank[m].push((bin, w));
            }
        }
    }
    bank
}

/// Speech iff log energy exceeds the utterance mean by `offset`, then
/// majority-smoothed over a +-2 frame window.
pub fn energy_vad(log_energy: &[f64], offset: f64) -> Vec<bool> {
    assert!(!log_energy.is_empty());
    let n = log_energy.len();
    let mean = log_energy.iter().sum::<f64>() / n as f64;
    let raw: Vec<bool> = log_energy.iter().map(|&e| e > mean + offset).collect();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(2);
            let hi = (t + 3).min(n);
            let yes = raw[lo..hi].iter().filter(|&&b| b).count();
            2 * yes > hi - lo
        })
        .collect()
}

/// Subtracts a centered local mean (window up to 300 frames, shifted
/// inward at the edges so interior frames see [t-150, t+150)).
pub fn sliding_cmn(f: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let n = f.rows;
    let half = window / 2;
    let mut out = f.clone();
    for t in 0..n {
        let lo = t.saturating_sub(half).min(n.saturating_sub(window));
        let hi = (lo + window).min(n);
        let count = (hi - lo) as f64;
        for c in 0..f.cols {
            let mean: f64 = (lo..hi).map(|u| f.data[u * f.cols + c]).sum::<f64>() / count;
            out.data[t * f.cols + c] = f.data[t * f.cols + c] - mean;
        }
    }
    out
}

pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(16 + f.data.len() * 4 + f.rows);
    out.extend_from_slice(FBNK_MAGIC);
    out.extend_from_slice(&FBNK_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.rows as u32).to_le_bytes());
    out.extend_from_slice(&(f.cols as u32).to_le_bytes());
    for &v in &f.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &b in &f.vad {
        out.push(b as u8);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads a feature file; the utterance id is the file stem.
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != FBNK_MAGIC {
        return Err(DspError::BadFeatureFile("missing FBNK magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FBNK_VERSION {
        return Err(DspError::BadFeatureFile(format!(
            "unsupported version {version}"
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let need = 16 + rows * cols * 4 + rows;
    if bytes.len() != need {
        return Err(DspError::BadFeatureFile(format!(
            "expected {need} bytes, found {}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes[16..16 + rows * cols * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let vad = bytes[16 + rows * cols * 4..].iter().map(|&b| b != 0).collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureMatrix {
        id,
        rows,
        cols,
        data,
        vad,
        log_energy: Vec::new(),
    })
}
