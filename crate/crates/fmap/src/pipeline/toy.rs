//! Synthetic two-domain corpus for desk-scale validation: each speaker is
//! a fixed triple of resonant filters excited by a pulse train; the target
//! domain passes the same renders through a fixed channel (spectral tilt +
//! short reverb tail) and adds foreground noise. Paired source/target files
//! are recorded in pairs.tsv for measurement only; training consumes the
//! two manifests independently.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dsp::{
    convolve_rir, mix_noise_at_snr, write_manifest, write_wav, AudioSignal, AugmentSpec,
    ManifestEntry,
};
use crate::training::sub_seed;

use super::{PipelineError, Result};

#[derive(Debug, Clone)]
pub struct ToyCorpusSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub utt_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            n_speakers: 20,
            utts_per_speaker: 10,
            utt_seconds: 3.0,
            sample_rate: 8000,
            seed: 0,
        }
    }
}

struct Resonator {
    c1: f64, // 2 r cos(omega)
    c2: f64, // -r^2
    gain: f64,
}

impl Resonator {
    fn new(freq_hz: f64, bandwidth_hz: f64, gain: f64, fs: f64) -> Resonator {
        let r = (-std::f64::consts::PI * bandwidth_hz / fs).exp();
        let omega = 2.0 * std::f64::consts::PI * freq_hz / fs;
        Resonator {
            c1: 2.0 * r * omega.cos(),
            c2: -r * r,
            gain: gain * (1.0 - r),
        }
    }

    fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut y1, mut y2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.gain * v + self.c1 * y1 + self.c2 * y2;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SpeakerVoice {
    pub f0_hz: f64,
    pub formants_hz: [f64; 3],
    bandwidths_hz: [f64; 3],
    gains: [f64; 3],
}

pub(crate) fn speaker_voice(spec: &ToyCorpusSpec, speaker: usize) -> SpeakerVoice {
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(spec.seed, &format!("spk{speaker:02}")));
    SpeakerVoice {
        f0_hz: rng.gen_range(90.0..240.0),
        formants_hz: [
            rng.gen_range(300.0..800.0),
            rng.gen_range(900.0..1800.0),
            rng.gen_range(2000.0..3400.0),
        ],
        bandwidths_hz: [
            rng.gen_range(60.0..120.0),
            rng.gen_range(80.0..160.0),
            rng.gen_range(120.0..240.0),
        ],
        gains: [1.0, rng.gen_range(0.4..0.8), rng.gen_range(0.15..0.4)],
    }
}

/// One clean utterance: jittered pulse train + breath noise through the
/// speaker's resonators, a slow amplitude envelope, and a short pause so
/// the energy VAD sees both speech and non-speech frames.
fn render_utterance(spec: &ToyCorpusSpec, voice: &SpeakerVoice, utt_id: &str) -> AudioSignal {
    let fs = spec.sample_rate as f64;
    let n = (spec.utt_seconds * fs).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(spec.seed, utt_id));

    let mut excitation = vec![0.0; n];
    let mut next_pulse = 0.0_f64;
    while (next_pulse as usize) < n {
        excitation[next_pulse as usize] = 1.0;
        let jitter = rng.gen_range(0.97..1.03);
        next_pulse += fs / (voice.f0_hz * jitter);
    }
    for v in &mut excitation {
        *v += 0.02 * (rng.gen_range(0.0..1.0_f64) - 0.5);
    }

    let mut mix = vec![0.0; n];
    for k in 0..3 {
        let res = Resonator::new(
            voice.formants_hz[k],
            voice.bandwidths_hz[k],
            voice.gains[k],
            fs,
        );
        for (m, y) in mix.iter_mut().zip(res.filter(&excitation)) {
            *m += y;
        }
    }

    // slow loudness contour plus one 0.3 s pause
    let env_hz = rng.gen_range(0.5..2.0);
    let env_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let pause_len = (0.3 * fs) as usize;
    let pause_start = rng.gen_range((0.5 * fs) as usize..n.saturating_sub(pause_len + 800));
    for (t, v) in mix.iter_mut().enumerate() {
        let mut env = 1.0 - 0.3 * (env_hz * std::f64::consts::TAU * t as f64 / fs + env_phase).sin();
        if t >= pause_start && t < pause_start + pause_len {
            env *= 0.05;
        }
        *v *= env;
    }

    let peak = mix.iter().fold(0.0_f64, |a, &v| a.max(v.abs())).max(1e-12);
    for v in &mut mix {
        *v *= 0.5 / peak;
    }
    AudioSignal::new(mix, spec.sample_rate)
}

/// The fixed target-domain channel: one-pole spectral tilt followed by a
/// short decaying reverb tail (noise is added separately, per utterance).
fn apply_channel(x: &AudioSignal, rir: &AudioSignal) -> Result<AudioSignal> {
    let a = 0.85;
    let mut y = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for &v in &x.samples {
        prev = (1.0 - a) * v + a * prev;
        y.push(prev);
    }
    Ok(convolve_rir(&AudioSignal::new(y, x.sample_rate), rir)?)
}

fn channel_rir(spec: &ToyCorpusSpec) -> AudioSignal {
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(spec.seed, "channel"));
    let taps = (0.02 * spec.sample_rate as f64) as usize;
    let mut rir = vec![0.0; taps];
    rir[0] = 1.0;
    for (k, v) in rir.iter_mut().enumerate().skip(1) {
        *v = 0.2 * (-(k as f64) / 30.0).exp() * rng.gen_range(-1.0..1.0);
    }
    AudioSignal::new(rir, spec.sample_rate)
}

fn make_noises(spec: &ToyCorpusSpec, count: usize) -> Vec<AudioSignal> {
    let fs = spec.sample_rate as f64;
    let n = (3.0 * fs) as usize;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(spec.seed, &format!("noise{i:02}")));
            let a = rng.gen_range(0.0..0.9); // random spectral color
            let mut prev = 0.0;
            let mut samples: Vec<f64> = (0..n)
                .map(|_| {
                    prev = (1.0 - a) * rng.gen_range(-1.0..1.0) + a * prev;
                    prev
                })
                .collect();
            if i % 3 == 2 {
                // tonal component on every third noise
                let tone = rng.gen_range(400.0..2500.0);
                for (t, v) in samples.iter_mut().enumerate() {
                    *v += 0.5 * (std::f64::consts::TAU * tone * t as f64 / fs).sin();
                }
            }
            let peak = samples.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs())).max(1e-12);
            for v in &mut samples {
                *v *= 0.5 / peak;
            }
            AudioSignal::new(samples, spec.sample_rate)
        })
        .collect()
}

/// Writes source/, target/, noise/ wav trees plus source.tsv, target.tsv,
/// noise.tsv, pairs.tsv (source/target file pairing, for tests only) and
/// trials.tsv (cross-domain: enroll source, test target).
pub fn cmd_synth_toy(spec: &ToyCorpusSpec, out: &Path) -> Result<()> {
    if spec.n_speakers < 2 {
        return Err(PipelineError::Stage {
            stage: "synth-toy",
            msg: "need at least 2 speakers".into(),
        });
    }
    let src_dir = out.join("source");
    let tgt_dir = out.join("target");
    let noise_dir = out.join("noise");
    fs::create_dir_all(&src_dir)?;
    fs::create_dir_all(&tgt_dir)?;
    fs::create_dir_all(&noise_dir)?;

    let rir = channel_rir(spec);
    let noises = make_noises(spec, 10);

    let mut src_entries = Vec::new();
    let mut tgt_entries = Vec::new();
    let mut pairs = String::new();
    for s in 0..spec.n_speakers {
        let speaker = format!("spk{s:02}");
        let voice = speaker_voice(spec, s);
        for u in 0..spec.utts_per_speaker {
            let base = format!("{speaker}_u{u:02}");
            let clean = render_utterance(spec, &voice, &base);

            let src_id = format!("{base}_src");
            let src_path = src_dir.join(format!("{src_id}.wav"));
            write_wav(&src_path, &clean)?;
            src_entries.push(ManifestEntry {
                utt_id: src_id.clone(),
                speaker_id: speaker.clone(),
                session_id: format!("s{u:02}"),
                domain: "source".into(),
                sample_rate: spec.sample_rate,
                path: src_path,
            });

            let channeled = apply_channel(&clean, &rir)?;
            let mut rng = ChaCha20Rng::seed_from_u64(sub_seed(spec.seed, &format!("mix.{base}")));
            // a single noise source at a fixed mid-range SNR, one event
            // spanning the whole utterance: the corruption is then a
            // near-deterministic, invertible function of the clean render,
            // which is the regime unpaired adaptation can actually undo
            let mix_spec = AugmentSpec {
                snr_lo_db: 10.0,
                snr_hi_db: 10.0,
                interval_s: spec.utt_seconds + 1.0,
            };
            let (noisy, _stats) = mix_noise_at_snr(&channeled, &noises[..1], &mix_spec, &mut rng)?;
            let tgt_id = format!("{base}_tgt");
            let tgt_path = tgt_dir.join(format!("{tgt_id}.wav"));
            write_wav(&tgt_path, &noisy)?;
            tgt_entries.push(ManifestEntry {
                utt_id: tgt_id.clone(),
                speaker_id: speaker.clone(),
                session_id: format!("s{u:02}"),
                domain: "target".into(),
                sample_rate: spec.sample_rate,
                path: tgt_path,
            });

            pairs.push_str(&format!("{src_id}\t{tgt_id}\n"));
        }
    }

    let mut noise_entries = Vec::new();
    for (i, noise) in noises.iter().enumerate() {
        let id = format!("noise{i:02}");
        let path = noise_dir.join(format!("{id}.wav"));
        write_wav(&path, noise)?;
        noise_entries.push(ManifestEntry {
            utt_id: id,
            speaker_id: "noise".into(),
            session_id: format!("s{i:02}"),
            domain: "noise".into(),
            sample_rate: spec.sample_rate,
            path,
        });
    }

    write_manifest(&out.join("source.tsv"), &src_entries)?;
    write_manifest(&out.join("target.tsv"), &tgt_entries)?;
    write_manifest(&out.join("noise.tsv"), &noise_entries)?;
    fs::write(out.join("pairs.tsv"), pairs)?;

    let mut trials = String::new();
    for e in &src_entries {
        for t in &tgt_entries {
            let label = if e.speaker_id == t.speaker_id { "tgt" } else { "non" };
            trials.push_str(&format!("{}\t{}\t{}\n", e.utt_id, t.utt_id, label));
        }
    }
    fs::write(out.join("trials.tsv"), trials)?;
    Ok(())
}
