//! Two-covariance PLDA: EM fitting of a between-speaker covariance B and a
//! within-speaker covariance W, and the verification log-likelihood ratio
//! log N([e;t]; 0, [[B+W, B],[B, B+W]]) - log N(e; 0, B+W) - log N(t; 0, B+W).

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{BackendError, Embedding, Result};

const MAX_ITERS: usize = 200;
const REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

pub struct PldaFit {
    pub model: PldaModel,
    /// Training log-likelihood after each EM iteration (non-decreasing).
    pub log_likelihoods: Vec<f64>,
}

struct SpeakerStats {
    n: f64,
    f: DVector<f64>,
    s: DMatrix<f64>, // second moment, sum of x x^T
}

pub fn fit_plda(embeddings: &[Embedding]) -> Result<PldaFit> {
    let d = embeddings
        .first()
        .map(|e| e.vector.len())
        .ok_or_else(|| BackendError::Degenerate("no embeddings".into()))?;
    let mut by_speaker: BTreeMap<&str, Vec<&Embedding>> = BTreeMap::new();
    for e in embeddings {
        let spk = e
            .speaker_id
            .as_deref()
            .ok_or_else(|| BackendError::Degenerate("unlabeled embedding".into()))?;
        by_speaker.entry(spk).or_default().push(e);
    }
    if by_speaker.len() < 2 {
        return Err(BackendError::Degenerate("need at least 2 speakers".into()));
    }
    for (spk, members) in &by_speaker {
        if members.len() < 2 {
            return Err(BackendError::Degenerate(format!(
                "speaker {spk} has fewer than 2 utterances"
            )));
        }
    }

    let n_total = embeddings.len() as f64;
    let mut mean = DVector::zeros(d);
    for e in embeddings {
        mean += DVector::from_column_slice(&e.vector);
    }
    mean /= n_total;

    // sufficient statistics per speaker, on centered data
    let mut stats = Vec::with_capacity(by_speaker.len());
    let mut w = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, d);
    for members in by_speaker.values() {
        let n = members.len() as f64;
        let mut f = DVector::zeros(d);
        let mut s = DMatrix::zeros(d, d);
        for e in members {
            let x = DVector::from_column_slice(&e.vector) - &mean;
            f += &x;
            s += &x * x.transpose();
        }
        let mu = &f / n;
        w += &s - &mu * f.transpose();
        b += n * &mu * mu.transpose();
        stats.push(SpeakerStats { n, f, s });
    }
    w /= n_total;
    b /= n_total;
    let ridge = 1e-6 * (w.trace() + b.trace()).max(1.0) / d as f64;
    for i in 0..d {
        w[(i, i)] += ridge;
        b[(i, i)] += ridge;
    }

    let n_speakers = stats.len() as f64;
    let mut lls = Vec::new();
    for _ in 0..MAX_ITERS {
        let chol_w = w
            .clone()
            .cholesky()
            .ok_or(BackendError::NotPositiveDefinite)?;
        let logdet_w = chol_logdet(&chol_w);
        let w_inv = chol_w.inverse();

        let mut ll = 0.0;
        let mut b_acc = DMatrix::zeros(d, d);
        let mut w_acc = DMatrix::zeros(d, d);
        for sp in &stats {
            // posterior of the speaker variable: cov C, mean m, computed
            // without inverting B (B may be near-singular)
            let wn = &w / sp.n;
            let reg = (&b + &wn)
                .cholesky()
                .ok_or(BackendError::NotPositiveDefinite)?
                .inverse();
            let c = {
                let raw = &b * &reg * &wn;
                (raw.clone() + raw.transpose()) * 0.5
            };
            let m = (&b * &reg * &sp.f) / sp.n;

            let g = &w + sp.n * &b;
            let chol_g = g.cholesky().ok_or(BackendError::NotPositiveDefinite)?;
            let wf = &w_inv * &sp.f;
            ll += -0.5
                * (sp.n * d as f64 * (2.0 * std::f64::consts::PI).ln()
                    + (sp.n - 1.0) * logdet_w
                    + chol_logdet(&chol_g)
                    + (&w_inv * &sp.s).trace()
                    - wf.dot(&(&c * &wf)));

            let yy = &c + &m * m.transpose();
            b_acc += &yy;
            w_acc += &sp.s - &m * sp.f.transpose() - &sp.f * m.transpose() + sp.n * yy;
        }
        lls.push(ll);

        b = &b_acc / n_speakers;
        w = &w_acc / n_total;
        b = (b.clone() + b.transpose()) * 0.5;
        w = (w.clone() + w.transpose()) * 0.5;

        if lls.len() >= 2 {
            let prev = lls[lls.len() - 2];
            if (ll - prev).abs() <= REL_TOL * prev.abs().max(1.0) {
                break;
            }
        }
    }

    Ok(PldaFit {
        model: PldaModel { mean, b, w },
        log_likelihoods: lls,
    })
}

fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Precomputed factorizations for scoring many trials.
pub struct PldaScorer {
    mean: DVector<f64>,
    chol_joint: Cholesky<f64, Dyn>,
    chol_single: Cholesky<f64, Dyn>,
    logdet_joint: f64,
    logdet_single: f64,
    d: usize,
}

impl PldaModel {
    pub fn scorer(&self) -> Result<PldaScorer> {
        let d = self.mean.len();
        let sigma = &self.b + &self.w;
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        joint.view_mut((0, 0), (d, d)).copy_from(&sigma);
        joint.view_mut((d, d), (d, d)).copy_from(&sigma);
        joint.view_mut((0, d), (d, d)).copy_from(&self.b);
        joint.view_mut((d, 0), (d, d)).copy_from(&self.b);
        let chol_joint = joint.cholesky().ok_or(BackendError::NotPositiveDefinite)?;
        let chol_single = sigma.cholesky().ok_or(BackendError::NotPositiveDefinite)?;
        let logdet_joint = chol_logdet(&chol_joint);
        let logdet_single = chol_logdet(&chol_single);
        Ok(PldaScorer {
            mean: self.mean.clone(),
            chol_joint,
            chol_single,
            logdet_joint,
            logdet_single,
            d,
        })
    }
}

impl PldaScorer {
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        if enroll.len() != self.d || test.len() != self.d {
            return Err(BackendError::DimMismatch {
                found: enroll.len().max(test.len()),
                expected: self.d,
            });
        }
        let u = DVector::from_column_slice(enroll) - &self.mean;
        let v = DVector::from_column_slice(test) - &self.mean;
        let mut joint = DVector::zeros(2 * self.d);
        joint.rows_mut(0, self.d).copy_from(&u);
        joint.rows_mut(self.d, self.d).copy_from(&v);

        let q_joint = mahalanobis(&self.chol_joint, &joint);
        let q_u = mahalanobis(&self.chol_single, &u);
        let q_v = mahalanobis(&self.chol_single, &v);
        // the 2*pi terms cancel between the joint and the two marginals
        Ok(-0.5 * (self.logdet_joint - 2.0 * self.logdet_single + q_joint - q_u - q_v))
    }
}

fn mahalanobis(chol: &Cholesky<f64, Dyn>, z: &DVector<f64>) -> f64 {
    let y = chol
        .l()
        .solve_lower_triangular(z)
        .expect("cholesky factor is nonsingular");
    y.norm_squared()
}

/// One-shot convenience: builds a scorer and scores a single pair.
pub fn plda_score(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    model.scorer()?.score(enroll, test)
}
