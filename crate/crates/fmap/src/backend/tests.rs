use super::*;
use crate::autodiff::Tensor;
use crate::dsp::FeatureMatrix;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn feat(rows: usize, cols: usize, data: Vec<f64>, vad: Vec<bool>) -> FeatureMatrix {
    FeatureMatrix {
        id: "u".into(),
        rows,
        cols,
        data,
        vad,
        log_energy: vec![],
    }
}

fn emb(id: &str, spk: &str, v: Vec<f64>) -> Embedding {
    Embedding {
        utt_id: id.to_string(),
        speaker_id: Some(spk.to_string()),
        vector: v,
    }
}

// ---- stats pooling ----

#[test]
fn stats_pool_hand_case() {
    let f = feat(2, 2, vec![1.0, 3.0, 3.0, 7.0], vec![true, true]);
    let e = stats_pool_embed(&f).unwrap();
    assert_eq!(e.vector, vec![2.0, 5.0, 1.0, 2.0]);
}

#[test]
fn stats_pool_constant_features_zero_std() {
    let f = feat(5, 3, vec![4.0; 15], vec![true; 5]);
    let e = stats_pool_embed(&f).unwrap();
    assert_eq!(&e.vector[..3], &[4.0, 4.0, 4.0]);
    assert_eq!(&e.vector[3..], &[0.0, 0.0, 0.0]);
}

#[test]
fn stats_pool_frame_order_invariant() {
    let a = feat(3, 1, vec![1.0, 2.0, 6.0], vec![true; 3]);
    let b = feat(3, 1, vec![6.0, 1.0, 2.0], vec![true; 3]);
    assert_eq!(
        stats_pool_embed(&a).unwrap().vector,
        stats_pool_embed(&b).unwrap().vector
    );
}

#[test]
fn stats_pool_uses_vad_and_needs_two_frames() {
    let f = feat(3, 1, vec![1.0, 100.0, 3.0], vec![true, false, true]);
    assert_eq!(stats_pool_embed(&f).unwrap().vector, vec![2.0, 1.0]);
    let one = feat(3, 1, vec![1.0, 2.0, 3.0], vec![false, true, false]);
    assert!(matches!(
        stats_pool_embed(&one),
        Err(BackendError::TooFewFrames { n: 1, min: 2 })
    ));
}

// ---- length normalization ----

#[test]
fn length_normalize_basics() {
    let e = emb("a", "s", vec![3.0, 4.0]);
    let n = length_normalize(&e).unwrap();
    assert_eq!(n.vector, vec![0.6, 0.8]);

    let unit = emb("b", "s", vec![1.0, 0.0]);
    assert_eq!(length_normalize(&unit).unwrap().vector, vec![1.0, 0.0]);

    let scaled = emb("c", "s", vec![21.0, 28.0]); // 7x the first
    assert_eq!(length_normalize(&scaled).unwrap().vector, vec![0.6, 0.8]);

    assert!(matches!(
        length_normalize(&emb("z", "s", vec![0.0, 0.0])),
        Err(BackendError::ZeroVector)
    ));
}

// ---- embedding file ----

#[test]
fn embd_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.embd");
    let es = vec![
        Embedding {
            utt_id: "u1".into(),
            speaker_id: None,
            vector: vec![1.5, -2.25],
        },
        Embedding {
            utt_id: "utt-two".into(),
            speaker_id: None,
            vector: vec![0.0, 3.0],
        },
    ];
    write_embeddings(&p, &es).unwrap();
    let r = read_embeddings(&p).unwrap();
    assert_eq!(r, es); // values chosen exactly representable in f32

    std::fs::write(&p, b"EMBDxxxx").unwrap();
    assert!(matches!(
        read_embeddings(&p),
        Err(BackendError::BadEmbeddingFile(_))
    ));
    write_embeddings(&p, &es).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
    assert!(matches!(
        read_embeddings(&p),
        Err(BackendError::BadEmbeddingFile(_))
    ));
}

// ---- LDA ----

fn gauss_vec(d: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    Tensor::randn(&[d], 1.0, rng).to_vec()
}

#[test]
fn lda_two_class_direction_matches_closed_form() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    // correlated within-class noise
    let l = [[1.0, 0.0], [0.5, 0.8]];
    let means = [[2.0, 0.0], [-2.0, 0.0]];
    let mut embeddings = Vec::new();
    for (c, mu) in means.iter().enumerate() {
        for i in 0..500 {
            let z = gauss_vec(2, &mut rng);
            let x = [
                mu[0] + l[0][0] * z[0],
                mu[1] + l[1][0] * z[0] + l[1][1] * z[1],
            ];
            embeddings.push(emb(&format!("c{c}u{i}"), &format!("spk{c}"), x.to_vec()));
        }
    }
    let fit = fit_center_lda(&embeddings, 1).unwrap();
    assert!(!fit.ridge_applied);

    // closed form: direction proportional to Sw^-1 (m1 - m2), using the
    // same empirical scatters computed directly here
    let m = |c: usize| -> DVector<f64> {
        let mut v = DVector::zeros(2);
        for e in embeddings.iter().filter(|e| e.speaker_id.as_deref() == Some(&format!("spk{c}"))) {
            v += DVector::from_column_slice(&e.vector);
        }
        v / 500.0
    };
    let (m0, m1) = (m(0), m(1));
    let mut sw = DMatrix::zeros(2, 2);
    for e in &embeddings {
        let mu = if e.speaker_id.as_deref() == Some("spk0") { &m0 } else { &m1 };
        let d = DVector::from_column_slice(&e.vector) - mu;
        sw += &d * d.transpose();
    }
    let dir = sw.try_inverse().unwrap() * (m0 - m1);
    let a = fit.matrix.column(0).normalize();
    let b = dir.normalize();
    let cos = a.dot(&b).abs();
    assert!(cos.acos() < 1e-6, "angle {}", cos.acos());
}

#[test]
fn lda_isotropic_within_spans_between_eigenvectors() {
    // 3 classes of two mirrored points: within scatter is exactly isotropic
    let eps = 0.1;
    let mus = [
        vec![1.0, 0.0, 0.0],
        vec![0.0, 2.0, 0.0],
        vec![0.0, 0.0, 3.0],
    ];
    let mut embeddings = Vec::new();
    for (c, mu) in mus.iter().enumerate() {
        for (j, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut x = mu.clone();
            x[c] += sign * eps;
            embeddings.push(emb(&format!("c{c}u{j}"), &format!("spk{c}"), x));
        }
    }
    let fit = fit_center_lda(&embeddings, 2).unwrap();

    // between-class scatter eigenvectors, computed independently
    let mean = DVector::from_column_slice(&[1.0 / 3.0, 2.0 / 3.0, 1.0]);
    let mut sb = DMatrix::zeros(3, 3);
    for mu in &mus {
        let g = DVector::from_column_slice(mu) - &mean;
        sb += 2.0 * &g * g.transpose();
    }
    let eig = (sb / 6.0).symmetric_eigen();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut top = DMatrix::zeros(3, 2);
    for (j, &i) in order.iter().take(2).enumerate() {
        top.set_column(j, &eig.eigenvectors.column(i));
    }

    let proj = |m: &DMatrix<f64>| {
        let q = m.clone().qr().q();
        &q * q.transpose()
    };
    let diff = proj(&fit.matrix) - proj(&top);
    assert!(diff.norm() < 1e-8, "subspace gap {}", diff.norm());
}

#[test]
fn lda_label_renaming_invariant() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut a = Vec::new();
    for c in 0..3 {
        for i in 0..20 {
            let mut x = gauss_vec(4, &mut rng);
            x[c] += 3.0;
            a.push(emb(&format!("u{c}_{i}"), &format!("spk{c}"), x));
        }
    }
    let names = ["zebra", "apple", "mango"];
    let b: Vec<Embedding> = a
        .iter()
        .map(|e| {
            let c: usize = e.speaker_id.as_ref().unwrap()[3..].parse().unwrap();
            Embedding {
                speaker_id: Some(names[c].to_string()),
                ..e.clone()
            }
        })
        .collect();
    let fa = fit_center_lda(&a, 2).unwrap();
    let fb = fit_center_lda(&b, 2).unwrap();
    for (x, y) in fa.matrix.iter().zip(fb.matrix.iter()) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn lda_singular_within_gets_ridge() {
    // every utterance equals its class mean: zero within-class scatter
    let embeddings = vec![
        emb("a1", "A", vec![1.0, 0.0]),
        emb("a2", "A", vec![1.0, 0.0]),
        emb("b1", "B", vec![-1.0, 0.5]),
        emb("b2", "B", vec![-1.0, 0.5]),
    ];
    let fit = fit_center_lda(&embeddings, 1).unwrap();
    assert!(fit.ridge_applied);
    assert!(fit.matrix.column(0).norm() > 0.0);
}

#[test]
fn lda_input_validation() {
    let embeddings = vec![emb("a", "A", vec![1.0, 2.0]), emb("b", "A", vec![2.0, 1.0])];
    assert!(matches!(
        fit_center_lda(&embeddings, 1),
        Err(BackendError::Degenerate(_))
    )); // one speaker
    assert!(matches!(
        fit_center_lda(&embeddings, 2),
        Err(BackendError::Lda(_))
    )); // p >= d
}

// ---- PLDA ----

fn spd(d: usize, scale: f64, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let m = DMatrix::from_iterator(d, d, Tensor::randn(&[d * d], 1.0, rng).to_vec());
    &m * m.transpose() * (scale / d as f64) + DMatrix::identity(d, d) * (0.2 * scale)
}

fn sample_corpus(
    b: &DMatrix<f64>,
    w: &DMatrix<f64>,
    speakers: usize,
    utts: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<Embedding> {
    let d = b.nrows();
    let lb = b.clone().cholesky().unwrap().l();
    let lw = w.clone().cholesky().unwrap().l();
    let mut out = Vec::new();
    for s in 0..speakers {
        let y = &lb * DVector::from_column_slice(&gauss_vec(d, rng));
        for u in 0..utts {
            let x = &y + &lw * DVector::from_column_slice(&gauss_vec(d, rng));
            out.push(emb(
                &format!("s{s}u{u}"),
                &format!("s{s}"),
                x.iter().copied().collect(),
            ));
        }
    }
    out
}

#[test]
fn plda_recovers_synthetic_covariances() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let u = DVector::from_column_slice(&gauss_vec(5, &mut rng)).normalize();
    let b = 4.0 * &u * u.transpose() + DMatrix::identity(5, 5) * 0.25;
    let w = spd(5, 0.2, &mut rng);
    let data = sample_corpus(&b, &w, 1000, 10, &mut rng);
    let fit = fit_plda(&data).unwrap();
    let rel_b = (&fit.model.b - &b).norm() / b.norm();
    let rel_w = (&fit.model.w - &w).norm() / w.norm();
    assert!(rel_b < 0.05, "B off by {rel_b}");
    assert!(rel_w < 0.05, "W off by {rel_w}");
}

#[test]
fn plda_em_loglik_monotone() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let b = spd(3, 1.0, &mut rng);
    let w = spd(3, 1.0, &mut rng);
    let data = sample_corpus(&b, &w, 30, 5, &mut rng);
    let fit = fit_plda(&data).unwrap();
    assert!(fit.log_likelihoods.len() >= 2);
    for pair in fit.log_likelihoods.windows(2) {
        assert!(
            pair[1] >= pair[0] - 1e-7 * pair[0].abs().max(1.0),
            "log-likelihood decreased: {} -> {}",
            pair[0],
            pair[1]
        );
    }
}

#[test]
fn plda_within_only_data_gives_small_b() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let w = spd(3, 1.0, &mut rng);
    let zero_b = DMatrix::zeros(3, 3) + DMatrix::identity(3, 3) * 1e-12;
    let data = sample_corpus(&zero_b, &w, 50, 20, &mut rng);
    let fit = fit_plda(&data).unwrap();
    assert!(fit.model.b.norm() < 0.05 * fit.model.w.norm());
}

#[test]
fn plda_rejects_degenerate_data() {
    let one_speaker = vec![emb("a", "A", vec![1.0]), emb("b", "A", vec![2.0])];
    assert!(matches!(
        fit_plda(&one_speaker),
        Err(BackendError::Degenerate(_))
    ));
    let singleton = vec![
        emb("a", "A", vec![1.0]),
        emb("b", "A", vec![2.0]),
        emb("c", "B", vec![3.0]),
    ];
    assert!(matches!(
        fit_plda(&singleton),
        Err(BackendError::Degenerate(_))
    ));
}

#[test]
fn plda_score_scalar_oracle() {
    // 1-D model: B=1, W=0.01, e=t=1
    let model = PldaModel {
        mean: DVector::zeros(1),
        b: DMatrix::from_element(1, 1, 1.0),
        w: DMatrix::from_element(1, 1, 0.01),
    };
    let got = plda_score(&model, &[1.0], &[1.0]).unwrap();

    let ln_n1 = |x: f64, var: f64| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + x * x / var);
    // joint: var 1.01 each, covariance 1
    let det = 1.01f64 * 1.01 - 1.0;
    let quad = (1.01 * 1.0 * 1.0 - 2.0 * 1.0 * 1.0 * 1.0 + 1.01 * 1.0 * 1.0) / det;
    let ln_joint =
        -0.5 * (2.0 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad);
    let want = ln_joint - ln_n1(1.0, 1.01) - ln_n1(1.0, 1.01);
    assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
}

#[test]
fn plda_score_matches_density_oracle_random_models() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for d in [1usize, 2] {
        for _ in 0..10 {
            let b = spd(d, 0.8, &mut rng);
            let w = spd(d, 0.5, &mut rng);
            let mean = DVector::from_column_slice(&gauss_vec(d, &mut rng));
            let model = PldaModel {
                mean: mean.clone(),
                b: b.clone(),
                w: w.clone(),
            };
            let e = gauss_vec(d, &mut rng);
            let t = gauss_vec(d, &mut rng);
            let got = plda_score(&model, &e, &t).unwrap();

            // direct density evaluation with explicit inverses
            let sigma = &b + &w;
            let mut joint = DMatrix::zeros(2 * d, 2 * d);
            joint.view_mut((0, 0), (d, d)).copy_from(&sigma);
            joint.view_mut((d, d), (d, d)).copy_from(&sigma);
            joint.view_mut((0, d), (d, d)).copy_from(&b);
            joint.view_mut((d, 0), (d, d)).copy_from(&b);
            let u = DVector::from_column_slice(&e) - &mean;
            let v = DVector::from_column_slice(&t) - &mean;
            let mut z = DVector::zeros(2 * d);
            z.rows_mut(0, d).copy_from(&u);
            z.rows_mut(d, d).copy_from(&v);
            let ln_mvn = |x: &DVector<f64>, cov: &DMatrix<f64>| {
                let k = x.len() as f64;
                let inv = cov.clone().try_inverse().unwrap();
                -0.5 * (k * (2.0 * std::f64::consts::PI).ln()
                    + cov.determinant().ln()
                    + (x.transpose() * inv * x)[(0, 0)])
            };
            let want = ln_mvn(&z, &joint) - ln_mvn(&u, &sigma) - ln_mvn(&v, &sigma);
            assert!((got - want).abs() < 1e-9, "d={d}: got {got}, want {want}");
        }
    }
}

#[test]
fn plda_score_zero_b_is_zero_and_symmetric() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let w = spd(3, 1.0, &mut rng);
    let model = PldaModel {
        mean: DVector::zeros(3),
        b: DMatrix::zeros(3, 3),
        w,
    };
    let scorer = model.scorer().unwrap();
    for _ in 0..5 {
        let e = gauss_vec(3, &mut rng);
        let t = gauss_vec(3, &mut rng);
        assert!(scorer.score(&e, &t).unwrap().abs() < 1e-12);
    }

    let mut rng2 = ChaCha20Rng::seed_from_u64(8);
    let model2 = PldaModel {
        mean: DVector::zeros(2),
        b: spd(2, 1.0, &mut rng2),
        w: spd(2, 0.5, &mut rng2),
    };
    let s2 = model2.scorer().unwrap();
    let e = gauss_vec(2, &mut rng2);
    let t = gauss_vec(2, &mut rng2);
    let ab = s2.score(&e, &t).unwrap();
    let ba = s2.score(&t, &e).unwrap();
    assert!((ab - ba).abs() < 1e-12);
}

// ---- S-norm ----

#[test]
fn snorm_identity_when_cohort_standard() {
    let c = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
    // mean 0, sample std exactly 1
    let s = adaptive_snorm(1.7, &c, &c, 2).unwrap();
    assert!((s - 1.7).abs() < 1e-12);
}

#[test]
fn snorm_hand_case() {
    let got = adaptive_snorm(2.0, &[1.0, 0.0], &[0.0, -1.0], 2).unwrap();
    let sd = 0.5f64.sqrt();
    let want = 0.5 * ((2.0 - 0.5) / sd + (2.0 + 0.5) / sd);
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn snorm_symmetric_and_validates_cohort() {
    let ce = [3.0, 1.0, 0.5, -2.0];
    let ct = [2.0, 0.0, -1.0];
    let a = adaptive_snorm(1.0, &ce, &ct, 3).unwrap();
    let b = adaptive_snorm(1.0, &ct, &ce, 3).unwrap();
    assert!((a - b).abs() < 1e-12);
    assert!(matches!(
        adaptive_snorm(1.0, &ct, &ce, 4),
        Err(BackendError::CohortTooSmall { .. })
    ));
    assert!(matches!(
        adaptive_snorm(1.0, &ce, &ct, 1),
        Err(BackendError::CohortTooSmall { .. })
    ));
}

#[test]
fn snorm_uses_top_k_only() {
    // top-2 of the enroll cohort is {10, 8}; the rest must be ignored
    let ce = [10.0, 8.0, -100.0, -200.0];
    let c_std = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
    let got = adaptive_snorm(9.0, &ce, &c_std, 2).unwrap();
    let sd = 2.0f64.sqrt(); // sample std of {10, 8}
    let want = 0.5 * ((9.0 - 9.0) / sd + 9.0);
    assert!((got - want).abs() < 1e-12);
}

// ---- metrics ----

fn labeled(tgts: &[f64], nons: &[f64]) -> Vec<(f64, bool)> {
    tgts.iter()
        .map(|&s| (s, true))
        .chain(nons.iter().map(|&s| (s, false)))
        .collect()
}

#[test]
fn eer_examples() {
    assert_eq!(compute_eer(&labeled(&[0.8, 0.6], &[0.2, 0.4])).unwrap(), 0.0);
    let e = compute_eer(&labeled(&[0.9, 0.7, 0.5, 0.3], &[0.6, 0.4, 0.2, 0.1])).unwrap();
    assert!((e - 0.25).abs() < 1e-12);
    assert_eq!(compute_eer(&labeled(&[0.2, 0.4], &[0.8, 0.6])).unwrap(), 1.0);
    assert!(matches!(
        compute_eer(&labeled(&[0.5], &[])),
        Err(BackendError::SingleClass)
    ));
}

#[test]
fn min_dcf_examples() {
    let params = DcfParams::default();
    let d = compute_min_dcf(&labeled(&[0.8, 0.6], &[0.2, 0.4]), &params).unwrap();
    assert_eq!(d, 0.0);
    // trivial thresholds bound the normalized cost by 1
    let d = compute_min_dcf(&labeled(&[0.1, 0.5], &[0.2, 0.6]), &params).unwrap();
    assert!(d <= 1.0 + 1e-12);
}

/// Brute-force metrics by direct counting at every candidate threshold.
fn brute_force_points(labeled: &[(f64, bool)]) -> Vec<(f64, f64)> {
    let n_tgt = labeled.iter().filter(|(_, t)| *t).count() as f64;
    let n_non = labeled.len() as f64 - n_tgt;
    let mut thresholds: Vec<f64> = labeled.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut points = vec![(1.0, 0.0)]; // accept everything
    for &thr in &thresholds {
        // accept score > thr
        let miss = labeled.iter().filter(|(s, t)| *t && *s <= thr).count() as f64;
        let fa = labeled.iter().filter(|(s, t)| !*t && *s > thr).count() as f64;
        points.push((fa / n_non, miss / n_tgt));
    }
    points
}

fn brute_force_eer(labeled: &[(f64, bool)]) -> f64 {
    let points = brute_force_points(labeled);
    let mut prev = points[0];
    for &p in &points[1..] {
        let (d0, d1) = (prev.1 - prev.0, p.1 - p.0);
        if d1 >= 0.0 {
            if d1 == 0.0 {
                return p.0;
            }
            if d0 == 0.0 {
                return prev.0;
            }
            let t = -d0 / (d1 - d0);
            return prev.1 + t * (p.1 - prev.1);
        }
        prev = p;
    }
    unreachable!()
}

fn brute_force_dcf(labeled: &[(f64, bool)], params: &DcfParams) -> f64 {
    let bm = params.p_target * params.c_miss;
    let bf = (1.0 - params.p_target) * params.c_fa;
    brute_force_points(labeled)
        .iter()
        .map(|&(fpr, fnr)| bm * fnr + bf * fpr)
        .fold(f64::INFINITY, f64::min)
        / bm.min(bf)
}

#[test]
fn metrics_match_brute_force_on_random_sets() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let params = DcfParams::default();
    for _ in 0..50 {
        use rand::Rng;
        let n = rng.gen_range(4..200);
        let mut set: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let target = rng.gen_bool(0.5);
                let base = if target { 0.3 } else { -0.3 };
                // quantized scores to exercise ties
                let s = (base + Tensor::randn(&[1], 1.0, &mut rng).item() * 10.0).round() / 10.0;
                (s, target)
            })
            .collect();
        set.push((0.0, true));
        set.push((0.0, false)); // guarantee both classes
        assert_eq!(compute_eer(&set).unwrap(), brute_force_eer(&set));
        assert_eq!(
            compute_min_dcf(&set, &params).unwrap(),
            brute_force_dcf(&set, &params)
        );
    }
}

#[test]
fn dcf_fixed_six_trial_case() {
    let set = labeled(&[2.0, 1.0, -0.5], &[1.5, 0.0, -1.0]);
    let params = DcfParams {
        p_target: 0.3,
        c_miss: 1.0,
        c_fa: 2.0,
    };
    assert_eq!(
        compute_min_dcf(&set, &params).unwrap(),
        brute_force_dcf(&set, &params)
    );
}

#[test]
fn trial_list_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("trials.tsv");
    std::fs::write(&p, "# c\ne1\tt1\ttgt\ne1\tt2\tnon\n").unwrap();
    let trials = read_trials(&p).unwrap();
    assert_eq!(trials.len(), 2);
    assert!(trials[0].target && !trials[1].target);

    std::fs::write(&p, "e1\tt1\tmaybe\n").unwrap();
    assert!(matches!(
        read_trials(&p),
        Err(BackendError::TrialList { line: 1, .. })
    ));

    let set = ScoreSet {
        trials,
        scores: vec![1.25, -0.5],
    };
    let sp = dir.path().join("scores.txt");
    write_scores(&sp, &set).unwrap();
    let text = std::fs::read_to_string(&sp).unwrap();
    assert!(text.starts_with("e1 t1 1.25"));
}

// ---- properties ----

proptest! {
    #[test]
    fn eer_invariant_under_positive_affine_scaling(
        raw in proptest::collection::vec((-100i32..100, any::<bool>()), 4..60),
        a in 1u32..50,
        b in -20i32..20,
    ) {
        let mut set: Vec<(f64, bool)> = raw
            .iter()
            .map(|&(s, t)| (s as f64 / 10.0, t))
            .collect();
        set.push((0.05, true));
        set.push((-0.05, false));
        let scaled: Vec<(f64, bool)> = set
            .iter()
            .map(|&(s, t)| (s * a as f64 + b as f64, t))
            .collect();
        let e1 = compute_eer(&set).unwrap();
        let e2 = compute_eer(&scaled).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn length_normalize_idempotent(
        raw in proptest::collection::vec(-100i32..100, 2..20),
    ) {
        prop_assume!(raw.iter().any(|&v| v != 0));
        let e = emb("x", "s", raw.iter().map(|&v| v as f64).collect());
        let once = length_normalize(&e).unwrap();
        let twice = length_normalize(&once).unwrap();
        for (a, b) in once.vector.iter().zip(&twice.vector) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let norm: f64 = once.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }
}
