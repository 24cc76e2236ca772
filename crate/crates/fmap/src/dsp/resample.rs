//! Blackman-windowed sinc resampler for the 8 kHz / 16 kHz pair.

use super::{AudioSignal, DspError, Result};

const HALF_WIDTH: usize = 50; // taps per side, in input samples
const ROLLOFF: f64 = 0.45; // cutoff as a fraction of the lower Nyquist pair

pub fn resample(x: &AudioSignal, target_hz: u32) -> Result<AudioSignal> {
    if x.sample_rate == target_hz {
        return Ok(x.clone());
    }
    let ok = matches!(
        (x.sample_rate, target_hz),
        (8000, 16000) | (16000, 8000)
    );
    if !ok {
        return Err(DspError::Unsupported(format!(
            "resampling {} -> {} Hz",
            x.sample_rate, target_hz
        )));
    }

    let src = x.sample_rate as f64;
    let dst = target_hz as f64;
    // cutoff in cycles per input sample, below the tighter Nyquist
    let fc = ROLLOFF * src.min(dst) / src;
    let n_out = ((x.len() as f64) * dst / src).round() as usize;
    let window_len = (2 * HALF_WIDTH) as f64;

    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let t = j as f64 * src / dst; // position in input samples
        let lo = (t - HALF_WIDTH as f64).ceil() as i64;
        let hi = (t + HALF_WIDTH as f64).floor() as i64;
        let mut acc = 0.0;
        for i in lo..=hi {
            if i < 0 || i as usize >= x.len() {
                continue;
            }
            let d = t - i as f64;
            acc += x.samples[i as usize] * 2.0 * fc * sinc(2.0 * fc * d)
                * blackman((d + HALF_WIDTH as f64) / window_len);
        }
        out.push(acc.clamp(-1.0, 1.0));
    }
    Ok(AudioSignal::new(out, target_hz))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Blackman window on u in [0, 1].
fn blackman(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    let w = 2.0 * std::f64::consts::PI * u;
    0.42 - 0.5 * w.cos() + 0.08 * (2.0 * w).cos()
}
