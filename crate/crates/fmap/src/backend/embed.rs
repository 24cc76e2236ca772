//! Stats-pooling embeddings (desk-scale stand-in for a trained speaker
//! network) and the binary embedding file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dsp::FeatureMatrix;

use super::{BackendError, Result};

pub const EMBD_MAGIC: &[u8; 4] = b"EMBD";
const EMBD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub utt_id: String,
    pub speaker_id: Option<String>,
    pub vector: Vec<f64>,
}

/// Per-dimension mean and (population) standard deviation over the
/// VAD-positive frames, concatenated: 40 mel bins give d = 80.
pub fn stats_pool_embed(f: &FeatureMatrix) -> Result<Embedding> {
    let frames: Vec<usize> = (0..f.rows).filter(|&t| f.vad[t]).collect();
    if frames.len() < 2 {
        return Err(BackendError::TooFewFrames {
            n: frames.len(),
            min: 2,
        });
    }
    let n = frames.len() as f64;
    let mut mean = vec![0.0; f.cols];
    for &t in &frames {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += f.data[t * f.cols + c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; f.cols];
    for &t in &frames {
        for (c, v) in var.iter_mut().enumerate() {
            let d = f.data[t * f.cols + c] - mean[c];
            *v += d * d;
        }
    }
    let mut vector = mean;
    vector.extend(var.into_iter().map(|v| (v / n).sqrt()));
    Ok(Embedding {
        utt_id: f.id.clone(),
        speaker_id: None,
        vector,
    })
}

pub fn length_normalize(e: &Embedding) -> Result<Embedding> {
    let norm = e.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(BackendError::ZeroVector);
    }
    Ok(Embedding {
        utt_id: e.utt_id.clone(),
        speaker_id: e.speaker_id.clone(),
        vector: e.vector.iter().map(|v| v / norm).collect(),
    })
}

pub fn write_embeddings(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    let dim = embeddings.first().map(|e| e.vector.len()).unwrap_or(0);
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(BackendError::DimMismatch {
                found: e.vector.len(),
                expected: dim,
            });
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(EMBD_MAGIC);
    out.extend_from_slice(&EMBD_VERSION.to_le_bytes());
    out.extend_from_slice(&(embeddings.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in embeddings {
        let id = e.utt_id.as_bytes();
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        for &v in &e.vector {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != EMBD_MAGIC {
        return Err(BackendError::BadEmbeddingFile("missing EMBD magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EMBD_VERSION {
        return Err(BackendError::BadEmbeddingFile(format!(
            "unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let mut pos = 16;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        if pos + 2 > bytes.len() {
            return Err(BackendError::BadEmbeddingFile("truncated".into()));
        }
        let id_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if pos + id_len + dim * 4 > bytes.len() {
            return Err(BackendError::BadEmbeddingFile("truncated".into()));
        }
        let utt_id = String::from_utf8(bytes[pos..pos + id_len].to_vec())
            .map_err(|_| BackendError::BadEmbeddingFile("non-UTF8 id".into()))?;
        pos += id_len;
        let vector = bytes[pos..pos + dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        pos += dim * 4;
        out.push(Embedding {
            utt_id,
            speaker_id: None,
            vector,
        });
    }
    if pos != bytes.len() {
        return Err(BackendError::BadEmbeddingFile("trailing bytes".into()));
    }
    Ok(out)
}
