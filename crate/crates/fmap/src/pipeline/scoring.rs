//! Embedding extraction, backend fitting (LDA + length-norm + PLDA),
//! trial scoring with optional adaptive S-norm, and evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::backend::{
    adaptive_snorm, compute_eer, compute_min_dcf, fit_center_lda, fit_plda, length_normalize,
    read_embeddings, read_trials, stats_pool_embed, write_embeddings, write_scores, DcfParams,
    Embedding, LdaFit, PldaModel, ScoreSet,
};
use crate::dsp::{read_features, read_manifest};
use crate::models::{load_checkpoint, save_checkpoint, Checkpoint};

use super::{require, PipelineError, Result};

/// Stats-pooling embeddings for every `.fbnk` under `features`, written as
/// one embedding file. Raw (un-normalized); the backend owns normalization.
pub fn cmd_embed(features: &Path, out: &Path) -> Result<()> {
    require("embed", features)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(features)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "fbnk"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::MissingArtifact {
            stage: "embed",
            path: features.join("*.fbnk"),
        });
    }
    let embeddings = paths
        .iter()
        .map(|p| Ok(stats_pool_embed(&read_features(p)?)?))
        .collect::<Result<Vec<_>>>()?;
    write_embeddings(out, &embeddings)?;
    Ok(())
}

/// Fitted backend: optional LDA projection, then length normalization,
/// then two-covariance PLDA.
pub struct BackendModel {
    pub lda: Option<LdaFit>,
    pub plda: PldaModel,
}

impl BackendModel {
    /// Applies the embedding transform used both in fitting and scoring.
    pub fn transform(&self, vector: &[f64]) -> Result<Vec<f64>> {
        let projected = match &self.lda {
            Some(lda) => lda.project(vector),
            None => vector.to_vec(),
        };
        let e = Embedding {
            utt_id: String::new(),
            speaker_id: None,
            vector: projected,
        };
        Ok(length_normalize(&e)?.vector)
    }
}

/// Labels embeddings by the manifest's speaker column and fits the backend.
pub fn cmd_backend(
    embeddings: &Path,
    manifest: &Path,
    out: &Path,
    lda_dim: Option<usize>,
) -> Result<()> {
    require("backend", embeddings)?;
    require("backend", manifest)?;
    let speakers: BTreeMap<String, String> = read_manifest(manifest)?
        .into_iter()
        .map(|e| (e.utt_id, e.speaker_id))
        .collect();
    let mut labeled = Vec::new();
    for mut e in read_embeddings(embeddings)? {
        let spk = speakers.get(&e.utt_id).ok_or_else(|| PipelineError::Stage {
            stage: "backend",
            msg: format!("utterance {} has no manifest entry", e.utt_id),
        })?;
        e.speaker_id = Some(spk.clone());
        labeled.push(e);
    }

    let lda = match lda_dim {
        Some(p) if p > 0 => Some(fit_center_lda(&labeled, p)?),
        _ => None,
    };
    let transformed = labeled
        .iter()
        .map(|e| {
            let projected = match &lda {
                Some(fit) => fit.project(&e.vector),
                None => e.vector.clone(),
            };
            Ok(length_normalize(&Embedding {
                vector: projected,
                ..e.clone()
            })?)
        })
        .collect::<Result<Vec<_>>>()?;
    let plda = fit_plda(&transformed)?.model;
    save_backend_model(out, &BackendModel { lda, plda })
}

fn save_backend_model(path: &Path, model: &BackendModel) -> Result<()> {
    let mut ckpt = Checkpoint::new();
    let d = model.plda.mean.len();
    ckpt.push("plda.mean", vec![d], model.plda.mean.iter().copied().collect());
    ckpt.push("plda.b", vec![d, d], row_major(&model.plda.b));
    ckpt.push("plda.w", vec![d, d], row_major(&model.plda.w));
    if let Some(lda) = &model.lda {
        ckpt.push("lda.mean", vec![lda.mean.len()], lda.mean.clone());
        ckpt.push(
            "lda.matrix",
            vec![lda.matrix.nrows(), lda.matrix.ncols()],
            row_major(&lda.matrix),
        );
        ckpt.push_scalar("lda.ridge_applied", lda.ridge_applied as u8 as f64);
    }
    save_checkpoint(path, &ckpt)?;
    Ok(())
}

pub fn load_backend_model(path: &Path) -> Result<BackendModel> {
    require("score", path)?;
    let ckpt = load_checkpoint(path)?;
    let get = |name: &str| {
        ckpt.get(name).ok_or_else(|| PipelineError::Stage {
            stage: "score",
            msg: format!("backend model is missing `{name}`"),
        })
    };
    let (_, mean) = get("plda.mean")?;
    let plda = PldaModel {
        mean: DVector::from_column_slice(mean),
        b: from_row_major(get("plda.b")?),
        w: from_row_major(get("plda.w")?),
    };
    let lda = if ckpt.get("lda.matrix").is_some() {
        let (_, lda_mean) = get("lda.mean")?;
        Some(LdaFit {
            mean: lda_mean.to_vec(),
            matrix: from_row_major(get("lda.matrix")?),
            ridge_applied: ckpt.get_scalar("lda.ridge_applied").unwrap_or(0.0) != 0.0,
        })
    } else {
        None
    };
    Ok(BackendModel { lda, plda })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

fn from_row_major((shape, data): (&[usize], &[f64])) -> DMatrix<f64> {
    DMatrix::from_row_slice(shape[0], shape[1], data)
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOpts {
    /// Embedding file for the S-norm cohort; skipping it skips S-norm.
    pub cohort: Option<PathBuf>,
    /// Top-k for adaptive S-norm; clamped to the cohort size.
    pub top_k: usize,
}

/// Scores a trial list with the fitted backend, optionally S-normalized.
pub fn cmd_score(
    backend: &Path,
    enroll: &Path,
    test: &Path,
    trials: &Path,
    out: &Path,
    opts: &ScoreOpts,
) -> Result<()> {
    require("score", enroll)?;
    require("score", test)?;
    require("score", trials)?;
    let model = load_backend_model(backend)?;
    let scorer = model.plda.scorer()?;

    let load = |path: &Path| -> Result<HashMap<String, Vec<f64>>> {
        read_embeddings(path)?
            .into_iter()
            .map(|e| Ok((e.utt_id, model.transform(&e.vector)?)))
            .collect()
    };
    let enroll_vecs = load(enroll)?;
    let test_vecs = load(test)?;

    let trial_list = read_trials(trials)?;
    let lookup = |side: &HashMap<String, Vec<f64>>, id: &str| -> Result<Vec<f64>> {
        side.get(id).cloned().ok_or_else(|| PipelineError::Stage {
            stage: "score",
            msg: format!("trial references unknown utterance {id}"),
        })
    };

    let mut scores = Vec::with_capacity(trial_list.len());
    for t in &trial_list {
        scores.push(scorer.score(&lookup(&enroll_vecs, &t.enroll)?, &lookup(&test_vecs, &t.test)?)?);
    }

    if let Some(cohort_path) = &opts.cohort {
        require("score", cohort_path)?;
        let cohort: Vec<Vec<f64>> = read_embeddings(cohort_path)?
            .into_iter()
            .map(|e| model.transform(&e.vector))
            .collect::<Result<_>>()?;
        let top_k = opts.top_k.min(cohort.len()).max(2);
        let side_scores = |vecs: &HashMap<String, Vec<f64>>,
                               id: &str,
                               cache: &mut HashMap<String, Vec<f64>>|
         -> Result<Vec<f64>> {
            if let Some(s) = cache.get(id) {
                return Ok(s.clone());
            }
            let v = lookup(vecs, id)?;
            let s = cohort
                .iter()
                .map(|c| scorer.score(&v, c))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            cache.insert(id.to_string(), s.clone());
            Ok(s)
        };
        let mut enroll_cache = HashMap::new();
        let mut test_cache = HashMap::new();
        for (t, s) in trial_list.iter().zip(&mut scores) {
            let ce = side_scores(&enroll_vecs, &t.enroll, &mut enroll_cache)?;
            let ct = side_scores(&test_vecs, &t.test, &mut test_cache)?;
            *s = adaptive_snorm(*s, &ce, &ct, top_k)?;
        }
    }

    write_scores(
        out,
        &ScoreSet {
            trials: trial_list,
            scores,
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub min_dcf: f64,
}

/// Joins a score file against a trial list and reports EER / minDCF.
/// Prints `EER <pct> minDCF <value>` and optionally appends one
/// machine-readable line to `report`.
pub fn cmd_eval(
    scores: &Path,
    trials: &Path,
    params: &DcfParams,
    report: Option<&Path>,
) -> Result<EvalReport> {
    require("eval", scores)?;
    require("eval", trials)?;
    let mut by_pair = HashMap::new();
    for (idx, line) in fs::read_to_string(scores)?.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(PipelineError::Stage {
                stage: "eval",
                msg: format!("score line {}: expected `enroll test score`", idx + 1),
            });
        }
        let value: f64 = fields[2].parse().map_err(|_| PipelineError::Stage {
            stage: "eval",
            msg: format!("score line {}: bad score `{}`", idx + 1, fields[2]),
        })?;
        by_pair.insert((fields[0].to_string(), fields[1].to_string()), value);
    }

    let labeled = read_trials(trials)?
        .into_iter()
        .map(|t| {
            let key = (t.enroll.clone(), t.test.clone());
            by_pair
                .get(&key)
                .map(|&s| (s, t.target))
                .ok_or_else(|| PipelineError::Stage {
                    stage: "eval",
                    msg: format!("trial {} {} has no score", t.enroll, t.test),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let eer = compute_eer(&labeled)?;
    let min_dcf = compute_min_dcf(&labeled, params)?;
    println!("EER {:.2} minDCF {:.4}", 100.0 * eer, min_dcf);
    if let Some(path) = report {
        let line = format!(
            "eer {:.6} min_dcf {:.6} p_target {:.4} trials {}\n",
            eer,
            min_dcf,
            params.p_target,
            labeled.len()
        );
        fs::write(path, line)?;
    }
    Ok(EvalReport { eer, min_dcf })
}
