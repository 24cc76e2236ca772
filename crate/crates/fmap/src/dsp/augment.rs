//! Training-time corruption: foreground noise events on a 1-second grid at
//! a random SNR, and room-impulse-response convolution.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::{AudioSignal, DspError, Result};

#[derive(Debug, Clone)]
pub struct AugmentSpec {
    pub snr_lo_db: f64,
    pub snr_hi_db: f64,
    pub interval_s: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            snr_lo_db: 0.0,
            snr_hi_db: 15.0,
            interval_s: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixEvent {
    pub onset: usize,
    pub len: usize,
    pub snr_db: f64,
    pub gain: f64,
    pub noise_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MixStats {
    pub events: Vec<MixEvent>,
    pub clipped_samples: usize,
    pub skipped_events: usize,
}

/// Adds one noise event per `interval_s` slot. Each event picks a corpus
/// noise and an SNR uniformly, fits the noise to the slot by truncation or
/// looping, and solves the gain so the overlapped signal segment sits at
/// the drawn SNR. Output is clipped to [-1, 1], counting clipped samples.
pub fn mix_noise_at_snr(
    x: &AudioSignal,
    noises: &[AudioSignal],
    spec: &AugmentSpec,
    rng: &mut ChaCha20Rng,
) -> Result<(AudioSignal, MixStats)> {
    if noises.is_empty() {
        return Err(DspError::EmptyNoiseCorpus);
    }
    for n in noises {
        if n.sample_rate != x.sample_rate {
            return Err(DspError::RateMismatch {
                a: x.sample_rate,
                b: n.sample_rate,
            });
        }
    }
    assert!(spec.interval_s > 0.0 && spec.snr_lo_db <= spec.snr_hi_db);

    let interval = (spec.interval_s * x.sample_rate as f64).round() as usize;
    let mut out = x.samples.clone();
    let mut stats = MixStats::default();

    let mut onset = 0;
    while onset < x.len() {
        let slot = interval.min(x.len() - onset);
        let noise_index = rng.gen_range(0..noises.len());
        let snr_db = if spec.snr_lo_db == spec.snr_hi_db {
            spec.snr_lo_db
        } else {
            rng.gen_range(spec.snr_lo_db..spec.snr_hi_db)
        };
        let noise = &noises[noise_index].samples;
        // truncate or loop the noise to fill the slot
        let fitted: Vec<f64> = (0..slot).map(|i| noise[i % noise.len()]).collect();

        let p_sig = power(&x.samples[onset..onset + slot]);
        let p_noise = power(&fitted);
        if p_sig == 0.0 || p_noise == 0.0 {
            stats.skipped_events += 1;
            onset += interval;
            continue;
        }
        let gain = (p_sig / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
        for (i, &v) in fitted.iter().enumerate() {
            let mixed = out[onset + i] + gain * v;
            let clipped = mixed.clamp(-1.0, 1.0);
            if clipped != mixed {
                stats.clipped_samples += 1;
            }
            out[onset + i] = clipped;
        }
        stats.events.push(MixEvent {
            onset,
            len: slot,
            snr_db,
            gain,
            noise_index,
        });
        onset += interval;
    }
    Ok((AudioSignal::new(out, x.sample_rate), stats))
}

fn power(s: &[f64]) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64
}

/// Full convolution with the RIR scaled so its peak-magnitude tap is
/// exactly +1 (aligning input time 0 to output time 0), truncated to the
/// input length and rescaled to the input peak. Any delta RIR is therefore
/// an exact identity.
pub fn convolve_rir(x: &AudioSignal, rir: &AudioSignal) -> Result<AudioSignal> {
    if x.sample_rate != rir.sample_rate {
        return Err(DspError::RateMismatch {
            a: x.sample_rate,
            b: rir.sample_rate,
        });
    }
    if rir.is_empty() || rir.samples.iter().all(|&v| v == 0.0) {
        return Err(DspError::ZeroSignal);
    }

    let peak_tap = rir
        .samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    let taps: Vec<f64> = rir
        .samples
        .iter()
        .map(|&v| v / rir.samples[peak_tap])
        .collect();

    let n = x.len();
    let mut out = vec![0.0; n];
    for (t, o) in out.iter_mut().enumerate() {
        // output index t corresponds to full-convolution index t + peak_tap
        let full = t + peak_tap;
        let mut acc = 0.0;
        for (k, &tap) in taps.iter().enumerate() {
            if tap == 0.0 {
                continue;
            }
            if let Some(i) = full.checked_sub(k) {
                if i < n {
                    acc += tap * x.samples[i];
                }
            }
        }
        *o = acc;
    }

    let peak_in = x.samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let peak_out = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak_out > 0.0 && peak_out != peak_in {
        let s = peak_in / peak_out;
        for v in &mut out {
            *v *= s;
        }
    }
    Ok(AudioSignal::new(out, x.sample_rate))
}
