//! Trial lists, score files, adaptive S-norm, EER and minimum DCF.

use std::fs;
use std::path::Path;

use super::{BackendError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub trials: Vec<Trial>,
    pub scores: Vec<f64>,
}

impl ScoreSet {
    pub fn labeled(&self) -> Vec<(f64, bool)> {
        self.scores
            .iter()
            .zip(&self.trials)
            .map(|(&s, t)| (s, t.target))
            .collect()
    }
}

/// Parses `enroll<TAB>test<TAB>{tgt|non}` lines.
pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(BackendError::TrialList {
                line,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let target = match fields[2] {
            "tgt" => true,
            "non" => false,
            other => {
                return Err(BackendError::TrialList {
                    line,
                    msg: format!("label must be tgt or non, found `{other}`"),
                })
            }
        };
        out.push(Trial {
            enroll: fields[0].to_string(),
            test: fields[1].to_string(),
            target,
        });
    }
    Ok(out)
}

pub fn write_scores(path: &Path, set: &ScoreSet) -> Result<()> {
    let mut text = String::new();
    for (t, s) in set.trials.iter().zip(&set.scores) {
        text.push_str(&format!("{} {} {:.8}\n", t.enroll, t.test, s));
    }
    fs::write(path, text)?;
    Ok(())
}

/// s' = [(s - mu_e)/sigma_e + (s - mu_t)/sigma_t] / 2 over each side's
/// top_k highest cohort scores; sample standard deviation, floored at 1e-6.
pub fn adaptive_snorm(s: f64, cohort_e: &[f64], cohort_t: &[f64], top_k: usize) -> Result<f64> {
    let (mu_e, sd_e) = top_stats(cohort_e, top_k)?;
    let (mu_t, sd_t) = top_stats(cohort_t, top_k)?;
    Ok(0.5 * ((s - mu_e) / sd_e + (s - mu_t) / sd_t))
}

fn top_stats(cohort: &[f64], top_k: usize) -> Result<(f64, f64)> {
    if top_k < 2 || cohort.len() < top_k {
        return Err(BackendError::CohortTooSmall {
            n: cohort.len(),
            top_k,
        });
    }
    let mut sorted = cohort.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = &sorted[..top_k];
    let mu = top.iter().sum::<f64>() / top_k as f64;
    let var = top.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (top_k - 1) as f64;
    Ok((mu, var.sqrt().max(1e-6)))
}

/// ROC operating points from "accept everything" to "reject everything":
/// (false-positive rate, false-negative rate), sorted by ascending
/// threshold at the distinct score values.
fn roc_points(labeled: &[(f64, bool)]) -> Result<Vec<(f64, f64)>> {
    let n_tgt = labeled.iter().filter(|(_, t)| *t).count();
    let n_non = labeled.len() - n_tgt;
    if n_tgt == 0 || n_non == 0 {
        return Err(BackendError::SingleClass);
    }
    let mut sorted = labeled.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // threshold below everything: all accepted
    let mut points = vec![(1.0, 0.0)];
    let (mut miss, mut rejected_non) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 {
                miss += 1;
            } else {
                rejected_non += 1;
            }
            i += 1;
        }
        // threshold just above v: scores <= v rejected
        points.push((
            (n_non - rejected_non) as f64 / n_non as f64,
            miss as f64 / n_tgt as f64,
        ));
    }
    Ok(points)
}

/// Equal error rate with linear interpolation between the operating points
/// adjacent to the FNR/FPR crossing.
pub fn compute_eer(labeled: &[(f64, bool)]) -> Result<f64> {
    let points = roc_points(labeled)?;
    let mut prev = points[0];
    for &p in &points[1..] {
        let d_prev = prev.1 - prev.0; // fnr - fpr
        let d_cur = p.1 - p.0;
        if d_cur >= 0.0 {
            if d_cur == 0.0 {
                return Ok(p.0);
            }
            if d_prev == 0.0 {
                return Ok(prev.0);
            }
            // interpolate along the segment to the crossing
            let t = -d_prev / (d_cur - d_prev);
            return Ok(prev.1 + t * (p.1 - prev.1));
        }
        prev = p;
    }
    // fnr never reaches fpr inside the sweep; the extreme point is the EER
    Ok(points.last().unwrap().0.max(points.last().unwrap().1))
}

#[derive(Debug, Clone, Copy)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        DcfParams {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// Minimum normalized detection cost over all thresholds.
pub fn compute_min_dcf(labeled: &[(f64, bool)], params: &DcfParams) -> Result<f64> {
    let points = roc_points(labeled)?;
    let beta_miss = params.p_target * params.c_miss;
    let beta_fa = (1.0 - params.p_target) * params.c_fa;
    let norm = beta_miss.min(beta_fa);
    let min_cost = points
        .iter()
        .map(|&(fpr, fnr)| beta_miss * fnr + beta_fa * fpr)
        .fold(f64::INFINITY, f64::min);
    Ok(min_cost / norm)
}
