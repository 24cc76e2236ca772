//! Corpus manifests: tab-separated `utt_id speaker_id session_id domain
//! sample_rate path`, plus the corpus-level filtering/concatenation ops.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_wav, write_wav, AudioSignal, DspError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub speaker_id: String,
    pub session_id: String,
    pub domain: String,
    pub sample_rate: u32,
    pub path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 6 {
            return Err(DspError::Manifest {
                line,
                msg: format!("expected 6 tab-separated fields, found {}", fields.len()),
            });
        }
        let sample_rate = fields[4].parse().map_err(|_| DspError::Manifest {
            line,
            msg: format!("bad sample rate `{}`", fields[4]),
        })?;
        entries.push(ManifestEntry {
            utt_id: fields[0].to_string(),
            speaker_id: fields[1].to_string(),
            session_id: fields[2].to_string(),
            domain: fields[3].to_string(),
            sample_rate,
            path: PathBuf::from(fields[5]),
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.utt_id,
            e.speaker_id,
            e.session_id,
            e.domain,
            e.sample_rate,
            e.path.display()
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Keeps the ceil(n/2) entries with the highest SNR (parallel `snrs`
/// array), sorted descending, ties broken by utterance id.
pub fn filter_top_half_by_snr(
    entries: &[ManifestEntry],
    snrs: &[f64],
) -> Result<Vec<ManifestEntry>> {
    if entries.is_empty() {
        return Err(DspError::EmptyManifest);
    }
    assert_eq!(entries.len(), snrs.len());
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        snrs[b]
            .total_cmp(&snrs[a])
            .then_with(|| entries[a].utt_id.cmp(&entries[b].utt_id))
    });
    let keep = entries.len().div_ceil(2);
    Ok(order[..keep].iter().map(|&i| entries[i].clone()).collect())
}

/// Concatenates audio per (speaker, session), in utterance-id order, and
/// writes one wav per session into `out_dir`. Output ids are
/// `{speaker}_{session}`, sorted.
pub fn concat_by_session(
    entries: &[ManifestEntry],
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    if entries.is_empty() {
        return Err(DspError::EmptyManifest);
    }
    fs::create_dir_all(out_dir)?;
    let mut groups: BTreeMap<(String, String), Vec<&ManifestEntry>> = BTreeMap::new();
    for e in entries {
        groups
            .entry((e.speaker_id.clone(), e.session_id.clone()))
            .or_default()
            .push(e);
    }

    let mut out = Vec::with_capacity(groups.len());
    for ((speaker, session), mut members) in groups {
        members.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
        let rate = members[0].sample_rate;
        if members.iter().any(|m| m.sample_rate != rate) {
            return Err(DspError::MixedRates { speaker, session });
        }
        let mut samples = Vec::new();
        for m in &members {
            let audio = read_wav(&m.path)?;
            if audio.sample_rate != rate {
                return Err(DspError::MixedRates { speaker, session });
            }
            samples.extend_from_slice(&audio.samples);
        }
        let utt_id = format!("{speaker}_{session}");
        let path = out_dir.join(format!("{utt_id}.wav"));
        write_wav(&path, &AudioSignal::new(samples, rate))?;
        out.push(ManifestEntry {
            utt_id,
            speaker_id: speaker,
            session_id: session,
            domain: members[0].domain.clone(),
            sample_rate: rate,
            path,
        });
    }
    Ok(out)
}
