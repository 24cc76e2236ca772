use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::backend::{read_embeddings, DcfParams};
use crate::dsp::{
    read_manifest, write_features, write_manifest, write_wav, AudioSignal, AugmentSpec,
    FeatureMatrix, ManifestEntry,
};
use crate::training::TrainConfig;

fn small_spec(seed: u64) -> ToyCorpusSpec {
    ToyCorpusSpec {
        n_speakers: 3,
        utts_per_speaker: 2,
        utt_seconds: 1.5,
        sample_rate: 8000,
        seed,
    }
}

fn dir_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn wav_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "wav")
        })
        .count()
}

#[test]
fn synth_toy_default_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ToyCorpusSpec {
        seed: 1,
        ..ToyCorpusSpec::default()
    };
    cmd_synth_toy(&spec, dir.path()).unwrap();
    assert_eq!(wav_count(&dir.path().join("source")), 200);
    assert_eq!(wav_count(&dir.path().join("target")), 200);
    let src = read_manifest(&dir.path().join("source.tsv")).unwrap();
    let tgt = read_manifest(&dir.path().join("target.tsv")).unwrap();
    assert_eq!(src.len(), 200);
    assert_eq!(tgt.len(), 200);
    assert!(src.iter().all(|e| e.domain == "source" && e.path.exists()));

    let trials = fs::read_to_string(dir.path().join("trials.tsv")).unwrap();
    assert_eq!(trials.lines().count(), 200 * 200);
    let tgt_trials = trials.lines().filter(|l| l.ends_with("\ttgt")).count();
    assert_eq!(tgt_trials, 20 * 10 * 10); // same-speaker pairs
}

#[test]
fn synth_toy_is_deterministic() {
    // manifests embed absolute paths, so strip the corpus root before
    // comparing the trees
    let normalized = |root: &Path| -> BTreeMap<PathBuf, Vec<u8>> {
        let prefix = root.to_string_lossy().into_owned();
        dir_bytes(root)
            .into_iter()
            .map(|(p, bytes)| {
                if p.extension().is_some_and(|e| e == "tsv") {
                    let text = String::from_utf8(bytes).unwrap().replace(&prefix, "");
                    (p, text.into_bytes())
                } else {
                    (p, bytes)
                }
            })
            .collect()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_synth_toy(&small_spec(7), a.path()).unwrap();
    cmd_synth_toy(&small_spec(7), b.path()).unwrap();
    assert_eq!(normalized(a.path()), normalized(b.path()));

    let c = tempfile::tempdir().unwrap();
    cmd_synth_toy(&small_spec(8), c.path()).unwrap();
    assert_ne!(normalized(a.path()), normalized(c.path()));
}

#[test]
fn synth_toy_speakers_have_distinct_voices() {
    let spec = ToyCorpusSpec::default();
    let voices: Vec<_> = (0..spec.n_speakers)
        .map(|s| super::toy::speaker_voice(&spec, s))
        .collect();
    for i in 0..voices.len() {
        for j in i + 1..voices.len() {
            assert_ne!(voices[i].formants_hz, voices[j].formants_hz);
            assert_ne!(voices[i].f0_hz, voices[j].f0_hz);
        }
    }
}

#[test]
fn synth_toy_rejects_single_speaker() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ToyCorpusSpec {
        n_speakers: 1,
        ..small_spec(0)
    };
    assert!(matches!(
        cmd_synth_toy(&spec, dir.path()),
        Err(PipelineError::Stage { stage: "synth-toy", .. })
    ));
}

fn entry(
    utt: &str,
    spk: &str,
    session: &str,
    rate: u32,
    path: PathBuf,
) -> ManifestEntry {
    ManifestEntry {
        utt_id: utt.into(),
        speaker_id: spk.into(),
        session_id: session.into(),
        domain: "source".into(),
        sample_rate: rate,
        path,
    }
}

fn sine(n: usize, rate: u32, freq: f64, amp: f64) -> AudioSignal {
    let samples = (0..n)
        .map(|t| amp * (std::f64::consts::TAU * freq * t as f64 / rate as f64).sin())
        .collect();
    AudioSignal::new(samples, rate)
}

#[test]
fn prepare_resamples_and_concats_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, audio: &AudioSignal| {
        let p = dir.path().join(name);
        write_wav(&p, audio).unwrap();
        p
    };
    let entries = vec![
        entry("a1", "spkA", "s1", 8000, w("a1.wav", &sine(8000, 8000, 440.0, 0.4))),
        entry("a2", "spkA", "s1", 8000, w("a2.wav", &sine(4000, 8000, 440.0, 0.4))),
        entry("b1", "spkA", "s2", 16000, w("b1.wav", &sine(16000, 16000, 440.0, 0.4))),
    ];
    let manifest = dir.path().join("manifest.tsv");
    write_manifest(&manifest, &entries).unwrap();

    let out = dir.path().join("prepared");
    let prepared = cmd_prepare(&manifest, &out, 8000, false).unwrap();
    assert_eq!(prepared.len(), 2);
    assert!(prepared.iter().all(|e| e.sample_rate == 8000));
    let s1 = prepared.iter().find(|e| e.session_id == "s1").unwrap();
    assert_eq!(crate::dsp::read_wav(&s1.path).unwrap().len(), 12000);
    let s2 = prepared.iter().find(|e| e.session_id == "s2").unwrap();
    assert_eq!(crate::dsp::read_wav(&s2.path).unwrap().sample_rate, 8000);
    // written manifest round-trips
    assert_eq!(read_manifest(&out.join("manifest.tsv")).unwrap(), prepared);
}

#[test]
fn prepare_snr_filter_drops_noisy_half() {
    use rand::distributions::Distribution;
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    // speech-like: gamma-distributed amplitudes; noise: gaussian
    let gamma = rand_distr::Gamma::new(0.4, (1.0f64 / 0.56).sqrt()).unwrap();
    let clean: Vec<f64> = (0..16000)
        .map(|_| {
            let a: f64 = gamma.sample(&mut rng);
            let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (a * s * 0.2).clamp(-1.0, 1.0)
        })
        .collect();
    let normal = rand_distr::Normal::new(0.0_f64, 0.2).unwrap();
    let noisy: Vec<f64> = (0..16000)
        .map(|_| normal.sample(&mut rng).clamp(-1.0, 1.0))
        .collect();

    let mut entries = Vec::new();
    for (i, samples) in [clean.clone(), noisy.clone(), clean, noisy].into_iter().enumerate() {
        let p = dir.path().join(format!("u{i}.wav"));
        write_wav(&p, &AudioSignal::new(samples, 8000)).unwrap();
        entries.push(entry(&format!("u{i}"), &format!("spk{i}"), "s0", 8000, p));
    }
    let manifest = dir.path().join("manifest.tsv");
    write_manifest(&manifest, &entries).unwrap();

    let prepared = cmd_prepare(&manifest, &dir.path().join("out"), 8000, true).unwrap();
    let kept: Vec<&str> = prepared.iter().map(|e| e.speaker_id.as_str()).collect();
    assert_eq!(kept, ["spk0", "spk2"]); // the two speech-like files
}

#[test]
fn augment_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth_toy(&small_spec(3), dir.path()).unwrap();
    let manifest = dir.path().join("source.tsv");
    let noise = dir.path().join("noise.tsv");
    let spec = AugmentSpec::default();

    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    cmd_augment(&manifest, &noise, None, &a, &spec, 5).unwrap();
    cmd_augment(&manifest, &noise, None, &b, &spec, 5).unwrap();
    cmd_augment(&manifest, &noise, None, &c, &spec, 6).unwrap();
    let wavs = |root: &Path| {
        let mut m = dir_bytes(root);
        m.retain(|p, _| p.extension().is_some_and(|e| e == "wav"));
        m
    };
    assert_eq!(wavs(&a), wavs(&b));
    assert_ne!(wavs(&a), wavs(&c));
}

#[test]
fn augment_with_rir_runs() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth_toy(&small_spec(4), dir.path()).unwrap();
    // a delayed-impulse RIR manifest
    let mut rir = vec![0.0; 32];
    rir[5] = 1.0;
    let rir_path = dir.path().join("rir.wav");
    write_wav(&rir_path, &AudioSignal::new(rir, 8000)).unwrap();
    write_manifest(
        &dir.path().join("rir.tsv"),
        &[entry("rir0", "rir", "s0", 8000, rir_path)],
    )
    .unwrap();

    let out = dir.path().join("aug");
    let augmented = cmd_augment(
        &dir.path().join("source.tsv"),
        &dir.path().join("noise.tsv"),
        Some(&dir.path().join("rir.tsv")),
        &out,
        &AugmentSpec::default(),
        9,
    )
    .unwrap();
    assert_eq!(augmented.len(), 6);
    assert!(augmented.iter().all(|e| e.path.exists()));
}

#[test]
fn fbank_embed_shapes_and_idempotence() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth_toy(&small_spec(2), dir.path()).unwrap();
    let feats = dir.path().join("feats");
    cmd_fbank(&dir.path().join("source.tsv"), &feats, &FbankOpts::default()).unwrap();
    let first = dir_bytes(&feats);
    cmd_fbank(&dir.path().join("source.tsv"), &feats, &FbankOpts::default()).unwrap();
    assert_eq!(first, dir_bytes(&feats));

    let embd = dir.path().join("source.embd");
    cmd_embed(&feats, &embd).unwrap();
    let embeddings = read_embeddings(&embd).unwrap();
    assert_eq!(embeddings.len(), 6);
    assert!(embeddings.iter().all(|e| e.vector.len() == 80));
}

fn write_store(dir: &Path, tag: &str, n_utts: usize, frames: usize, mel: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in 0..n_utts {
        let data = (0..frames * mel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        write_features(
            &dir.join(format!("{tag}{i}.fbnk")),
            &FeatureMatrix {
                id: format!("{tag}{i}"),
                rows: frames,
                cols: mel,
                data,
                vad: vec![true; frames],
                log_energy: vec![],
            },
        )
        .unwrap();
    }
}

fn tiny_train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        seq_len: 16,
        mel_bins: 16,
        epochs: 2,
        plateau_epochs: 1,
        base_channels: 2,
        n_resblocks: 1,
        disc_channels: vec![4, 1],
        lr_gen: 1e-3,
        lr_disc: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn train_is_idempotent_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = (dir.path().join("src"), dir.path().join("tgt"));
    write_store(&src, "s", 4, 24, 16, 1);
    write_store(&tgt, "t", 4, 24, 16, 2);
    let cfg = tiny_train_cfg(13);
    let out = dir.path().join("run");

    cmd_train(&src, &tgt, &out, &cfg).unwrap();
    let final_ckpt = out.join("epoch_002.fmap");
    let bytes = fs::read(&final_ckpt).unwrap();
    let log_len = fs::read_to_string(out.join("train.log")).unwrap().lines().count();
    assert_eq!(log_len, 4); // ceil(4/2) steps x 2 epochs

    // re-run: finished runs are a no-op
    cmd_train(&src, &tgt, &out, &cfg).unwrap();
    assert_eq!(fs::read_to_string(out.join("train.log")).unwrap().lines().count(), 4);

    // drop the final checkpoint: the rerun resumes from epoch 1 and lands
    // on byte-identical weights
    fs::remove_file(&final_ckpt).unwrap();
    cmd_train(&src, &tgt, &out, &cfg).unwrap();
    assert_eq!(fs::read(&final_ckpt).unwrap(), bytes);
}

#[test]
fn map_with_identity_generator_is_bitwise_noop() {
    let dir = tempfile::tempdir().unwrap();
    let feats = dir.path().join("feats");
    write_store(&feats, "u", 3, 20, 16, 3);

    let cfg = tiny_train_cfg(5);
    let state = crate::training::TrainState::new(&cfg);
    let ckpt = dir.path().join("init.fmap");
    crate::models::save_checkpoint(&ckpt, &state.to_checkpoint()).unwrap();

    let out = dir.path().join("mapped");
    cmd_map(&feats, &ckpt, &cfg, &out).unwrap();
    assert_eq!(dir_bytes(&feats), dir_bytes(&out));
}

#[test]
fn map_preserves_shapes_after_training() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt) = (dir.path().join("src"), dir.path().join("tgt"));
    write_store(&src, "s", 4, 24, 16, 1);
    write_store(&tgt, "t", 4, 30, 16, 2);
    let cfg = tiny_train_cfg(13);
    let out = dir.path().join("run");
    cmd_train(&src, &tgt, &out, &cfg).unwrap();

    let mapped = dir.path().join("mapped");
    cmd_map(&tgt, &out.join("epoch_002.fmap"), &cfg, &mapped).unwrap();
    for i in 0..4 {
        let f = crate::dsp::read_features(&mapped.join(format!("t{i}.fbnk"))).unwrap();
        assert_eq!((f.rows, f.cols), (30, 16));
        // trained generator is no longer the identity
        let orig = crate::dsp::read_features(&tgt.join(format!("t{i}.fbnk"))).unwrap();
        assert_ne!(f.data, orig.data);
    }
}

#[test]
fn backend_score_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth_toy(&small_spec(6), dir.path()).unwrap();
    let feats = dir.path().join("feats");
    cmd_fbank(&dir.path().join("source.tsv"), &feats, &FbankOpts::default()).unwrap();
    let embd = dir.path().join("source.embd");
    cmd_embed(&feats, &embd).unwrap();

    let model_path = dir.path().join("backend.fmap");
    cmd_backend(&embd, &dir.path().join("source.tsv"), &model_path, Some(2)).unwrap();
    let model = load_backend_model(&model_path).unwrap();
    assert_eq!(model.lda.as_ref().unwrap().matrix.ncols(), 2);
    assert_eq!(model.plda.mean.len(), 2);

    // same-domain trials among the source utterances
    let entries = read_manifest(&dir.path().join("source.tsv")).unwrap();
    let mut trials = String::new();
    for a in &entries {
        for b in &entries {
            if a.utt_id < b.utt_id {
                let label = if a.speaker_id == b.speaker_id { "tgt" } else { "non" };
                trials.push_str(&format!("{}\t{}\t{}\n", a.utt_id, b.utt_id, label));
            }
        }
    }
    let trials_path = dir.path().join("trials.tsv");
    fs::write(&trials_path, trials).unwrap();

    let scores = dir.path().join("scores.txt");
    cmd_score(&model_path, &embd, &embd, &trials_path, &scores, &ScoreOpts::default()).unwrap();
    let n_trials = fs::read_to_string(&trials_path).unwrap().lines().count();
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().count(), n_trials);

    let report_path = dir.path().join("report.txt");
    let report = cmd_eval(
        &scores,
        &trials_path,
        &DcfParams::default(),
        Some(&report_path),
    )
    .unwrap();
    assert!((0.0..=1.0).contains(&report.eer));
    assert!(report.min_dcf.is_finite() && report.min_dcf >= 0.0);
    let line = fs::read_to_string(&report_path).unwrap();
    assert!(line.starts_with("eer ") && line.contains("min_dcf "));

    // S-norm with the embedding set itself as cohort changes the scores
    let snormed = dir.path().join("scores_snorm.txt");
    cmd_score(
        &model_path,
        &embd,
        &embd,
        &trials_path,
        &snormed,
        &ScoreOpts {
            cohort: Some(embd.clone()),
            top_k: 3,
        },
    )
    .unwrap();
    assert_ne!(fs::read(&scores).unwrap(), fs::read(&snormed).unwrap());
}

#[test]
fn eval_separable_scores_report_zero() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.tsv");
    let scores = dir.path().join("scores.txt");
    fs::write(&trials, "e1\tt1\ttgt\ne1\tt2\tnon\ne2\tt1\tnon\ne2\tt2\ttgt\n").unwrap();
    fs::write(&scores, "e1 t1 3.0\ne1 t2 -1.0\ne2 t1 -2.0\ne2 t2 4.0\n").unwrap();
    let report = cmd_eval(&scores, &trials, &DcfParams::default(), None).unwrap();
    assert_eq!(report.eer, 0.0);
    assert_eq!(report.min_dcf, 0.0);
}

#[test]
fn eval_rejects_unscored_trials() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.tsv");
    let scores = dir.path().join("scores.txt");
    fs::write(&trials, "e1\tt1\ttgt\ne1\tt2\tnon\n").unwrap();
    fs::write(&scores, "e1 t1 3.0\n").unwrap();
    assert!(matches!(
        cmd_eval(&scores, &trials, &DcfParams::default(), None),
        Err(PipelineError::Stage { stage: "eval", .. })
    ));
}

#[test]
fn exit_codes_match_error_classes() {
    use crate::training::TrainError;
    let missing = PipelineError::MissingArtifact {
        stage: "map",
        path: PathBuf::from("/nope"),
    };
    assert_eq!(missing.exit_code(), 3);
    let config = PipelineError::Train(TrainError::InvalidConfig("bad".into()));
    assert_eq!(config.exit_code(), 2);
    let numeric = PipelineError::Train(TrainError::NonFiniteGradient { index: 0 });
    assert_eq!(numeric.exit_code(), 4);
    let line = PipelineError::Train(TrainError::Config {
        line: 3,
        msg: "unknown key".into(),
    });
    assert_eq!(line.exit_code(), 2);
}

#[test]
fn missing_inputs_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let nope = dir.path().join("nope.tsv");
    assert!(matches!(
        cmd_fbank(&nope, &dir.path().join("out"), &FbankOpts::default()),
        Err(PipelineError::MissingArtifact { stage: "fbank", .. })
    ));
    assert!(matches!(
        cmd_embed(&dir.path().join("nothing"), &dir.path().join("o.embd")),
        Err(PipelineError::MissingArtifact { stage: "embed", .. })
    ));
}
