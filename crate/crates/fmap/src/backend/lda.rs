//! Centering + LDA: within-class whitening followed by an
//! eigendecomposition of the whitened between-class scatter.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{BackendError, Embedding, Result};

pub struct LdaFit {
    pub mean: Vec<f64>,
    /// d x p projection; apply as y = A^T (x - mean).
    pub matrix: DMatrix<f64>,
    pub ridge_applied: bool,
}

impl LdaFit {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.mean).map(|(v, m)| v - m),
        );
        (self.matrix.transpose() * centered).iter().copied().collect()
    }
}

pub fn fit_center_lda(embeddings: &[Embedding], p: usize) -> Result<LdaFit> {
    let d = embeddings
        .first()
        .map(|e| e.vector.len())
        .ok_or_else(|| BackendError::Degenerate("no embeddings".into()))?;
    if p >= d {
        return Err(BackendError::Lda(format!(
            "target dimension {p} must be below embedding dimension {d}"
        )));
    }
    if embeddings.len() <= p {
        return Err(BackendError::Degenerate(format!(
            "{} embeddings cannot support {p} dimensions",
            embeddings.len()
        )));
    }

    let mut by_speaker: BTreeMap<&str, Vec<&Embedding>> = BTreeMap::new();
    for e in embeddings {
        let spk = e
            .speaker_id
            .as_deref()
            .ok_or_else(|| BackendError::Degenerate("unlabeled embedding".into()))?;
        by_speaker.entry(spk).or_default().push(e);
    }
    if by_speaker.len() < 2 {
        return Err(BackendError::Degenerate(
            "need at least 2 speakers".into(),
        ));
    }

    let n = embeddings.len() as f64;
    let mut mean = DVector::zeros(d);
    for e in embeddings {
        mean += DVector::from_column_slice(&e.vector);
    }
    mean /= n;

    let mut sw = DMatrix::zeros(d, d);
    let mut sb = DMatrix::zeros(d, d);
    for members in by_speaker.values() {
        let nc = members.len() as f64;
        let mut mu_c = DVector::zeros(d);
        for e in members {
            mu_c += DVector::from_column_slice(&e.vector);
        }
        mu_c /= nc;
        for e in members {
            let dev = DVector::from_column_slice(&e.vector) - &mu_c;
            sw += &dev * dev.transpose();
        }
        let gap = &mu_c - &mean;
        sb += nc * &gap * gap.transpose();
    }
    sw /= n;
    sb /= n;

    // whiten within-class scatter; fall back to a ridge if singular
    let mut ridge_applied = false;
    let chol = match sw.clone().cholesky() {
        Some(c) => c,
        None => {
            ridge_applied = true;
            let ridge = 1e-6 * sw.trace().max(1.0) / d as f64;
            for i in 0..d {
                sw[(i, i)] += ridge;
            }
            sw.clone()
                .cholesky()
                .ok_or(BackendError::NotPositiveDefinite)?
        }
    };
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or(BackendError::NotPositiveDefinite)?;
    let whitened = &l_inv * sb * l_inv.transpose();
    let sym = (whitened.clone() + whitened.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut matrix = DMatrix::zeros(d, p);
    for (j, &idx) in order.iter().take(p).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let mut w = l_inv.transpose() * v;
        // deterministic sign: largest-magnitude component positive
        let lead = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        if w[lead] < 0.0 {
            w = -w;
        }
        matrix.set_column(j, &w);
    }

    Ok(LdaFit {
        mean: mean.iter().copied().collect(),
        matrix,
        ridge_applied,
    })
}
