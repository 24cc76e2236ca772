//! RIFF/PCM-16 mono WAV reader and writer. Round trips of 16-bit data are
//! byte-identical.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AudioSignal, DspError, Result};

pub fn read_wav(path: &Path) -> Result<AudioSignal> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(DspError::BadWav("missing RIFF/WAVE header".into()));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(DspError::BadWav("chunk overruns file".into()));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(DspError::BadWav("fmt chunk too small".into()));
                }
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {} // skip unknown chunks
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }

    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| DspError::BadWav("missing fmt chunk".into()))?;
    if format != 1 {
        return Err(DspError::Unsupported(format!(
            "wav format code {format}, only PCM supported"
        )));
    }
    if channels != 1 {
        return Err(DspError::Unsupported(format!(
            "{channels} channels, only mono supported"
        )));
    }
    if bits != 16 {
        return Err(DspError::Unsupported(format!(
            "{bits}-bit samples, only 16-bit supported"
        )));
    }
    let data = data.ok_or_else(|| DspError::BadWav("missing data chunk".into()))?;
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    if samples.is_empty() {
        return Err(DspError::BadWav("empty data chunk".into()));
    }
    Ok(AudioSignal::new(samples, rate))
}

pub fn write_wav(path: &Path, x: &AudioSignal) -> Result<()> {
    let n = x.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&x.sample_rate.to_le_bytes());
    out.extend_from_slice(&(x.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &x.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
