//! Blind SNR estimation from the waveform amplitude distribution: the
//! statistic ln(mean|x|) - mean(ln|x|) mapped through a bundled lookup
//! table (see data/wada_table.txt for its provenance).

use std::sync::OnceLock;

use super::{AudioSignal, DspError, Result};

const TABLE_TEXT: &str = include_str!("../../data/wada_table.txt");
const AMP_FLOOR: f64 = 1e-10;

fn table() -> &'static Vec<(f64, f64)> {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        TABLE_TEXT
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|l| {
                let mut it = l.split_whitespace();
                let g: f64 = it.next().unwrap().parse().unwrap();
                let snr: f64 = it.next().unwrap().parse().unwrap();
                (g, snr)
            })
            .collect()
    })
}

/// Estimated SNR in dB, clamped to the table range.
pub fn wada_snr(x: &AudioSignal) -> Result<f64> {
    let min = x.sample_rate as usize / 2; // half a second
    if x.len() < min {
        return Err(DspError::TooShort { n: x.len(), min });
    }
    if x.samples.iter().all(|&v| v == 0.0) {
        return Err(DspError::ZeroSignal);
    }

    let n = x.len() as f64;
    let mut sum_abs = 0.0;
    let mut sum_ln = 0.0;
    for &v in &x.samples {
        let a = v.abs().max(AMP_FLOOR);
        sum_abs += a;
        sum_ln += a.ln();
    }
    let g = (sum_abs / n).ln() - sum_ln / n;

    let t = table();
    if g <= t[0].0 {
        return Ok(t[0].1);
    }
    if g >= t[t.len() - 1].0 {
        return Ok(t[t.len() - 1].1);
    }
    let i = t.partition_point(|(gi, _)| *gi < g);
    let (g0, s0) = t[i - 1];
    let (g1, s1) = t[i];
    Ok(s0 + (g - g0) / (g1 - g0) * (s1 - s0))
}
