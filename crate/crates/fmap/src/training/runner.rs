//! The training loop: alternating generator/discriminator updates, one
//! checkpoint per epoch, bit-exact resume.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::autodiff::backward;
use crate::models::{
    build_discriminator, build_generator, load_params, save_checkpoint, Checkpoint,
    Discriminator, DiscriminatorSpec, Generator,
};

use super::losses::{disc_loss, total_generator_loss};
use super::optim::Adam;
use super::{
    lr_at_epoch, sample_batch, sub_seed, FeatureBatch, FeatureStore, Result, TrainConfig,
    TrainError,
};

pub struct TrainState {
    pub cfg: TrainConfig,
    pub g_st: Generator,
    pub g_ts: Generator,
    pub d_s: Discriminator,
    pub d_t: Discriminator,
    pub opt_g: Adam,
    pub opt_ds: Adam,
    pub opt_dt: Adam,
    /// Number of completed epochs (0 for a fresh state).
    pub epochs_done: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> TrainState {
        let gspec = cfg.generator_spec();
        let dspec = DiscriminatorSpec {
            channels: cfg.disc_channels.clone(),
            ..DiscriminatorSpec::default()
        };
        let g_st = build_generator(&gspec, sub_seed(cfg.seed, "g_st"));
        let g_ts = build_generator(&gspec, sub_seed(cfg.seed, "g_ts"));
        let d_s = build_discriminator(&dspec, sub_seed(cfg.seed, "d_s"));
        let d_t = build_discriminator(&dspec, sub_seed(cfg.seed, "d_t"));

        let mut gen_params = g_st.params();
        gen_params.extend(g_ts.params());
        let opt_g = Adam::new(gen_params, cfg.beta1, cfg.beta2, cfg.eps);
        let opt_ds = Adam::new(d_s.params(), cfg.beta1, cfg.beta2, cfg.eps);
        let opt_dt = Adam::new(d_t.params(), cfg.beta1, cfg.beta2, cfg.eps);
        TrainState {
            cfg: cfg.clone(),
            g_st,
            g_ts,
            d_s,
            d_t,
            opt_g,
            opt_ds,
            opt_dt,
            epochs_done: 0,
        }
    }

    /// Serializes parameters, optimizer moments and counters in a fixed
    /// order, so identical states produce identical bytes.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        let groups: [(&str, Vec<(String, crate::autodiff::Tensor)>); 4] = [
            ("g_st", self.g_st.named_params()),
            ("g_ts", self.g_ts.named_params()),
            ("d_s", self.d_s.named_params()),
            ("d_t", self.d_t.named_params()),
        ];
        for (prefix, params) in &groups {
            for (name, t) in params {
                ckpt.push(format!("{prefix}.{name}"), t.shape().to_vec(), t.to_vec());
            }
        }
        for (tag, opt) in [
            ("opt_g", &self.opt_g),
            ("opt_ds", &self.opt_ds),
            ("opt_dt", &self.opt_dt),
        ] {
            let (m, v) = opt.moments();
            for (i, mi) in m.iter().enumerate() {
                ckpt.push(format!("{tag}.m.{i}"), vec![mi.len()], mi.clone());
            }
            for (i, vi) in v.iter().enumerate() {
                ckpt.push(format!("{tag}.v.{i}"), vec![vi.len()], vi.clone());
            }
            ckpt.push_scalar(format!("{tag}.step"), opt.step_count() as f64);
        }
        ckpt.push_scalar("meta.epoch", self.epochs_done as f64);
        ckpt.push_scalar("meta.seed", self.cfg.seed as f64);
        ckpt
    }

    pub fn from_checkpoint(cfg: &TrainConfig, ckpt: &Checkpoint) -> Result<TrainState> {
        let mut state = TrainState::new(cfg);
        load_params(&state.g_st.named_params(), ckpt, "g_st")?;
        load_params(&state.g_ts.named_params(), ckpt, "g_ts")?;
        load_params(&state.d_s.named_params(), ckpt, "d_s")?;
        load_params(&state.d_t.named_params(), ckpt, "d_t")?;
        for (tag, opt, n_params) in [
            (
                "opt_g",
                &mut state.opt_g,
                state.g_st.params().len() + state.g_ts.params().len(),
            ),
            ("opt_ds", &mut state.opt_ds, state.d_s.params().len()),
            ("opt_dt", &mut state.opt_dt, state.d_t.params().len()),
        ] {
            let mut m = Vec::with_capacity(n_params);
            let mut v = Vec::with_capacity(n_params);
            for i in 0..n_params {
                let (_, md) = ckpt.get(&format!("{tag}.m.{i}")).ok_or_else(|| {
                    crate::models::ModelError::MissingParameter(format!("{tag}.m.{i}"))
                })?;
                let (_, vd) = ckpt.get(&format!("{tag}.v.{i}")).ok_or_else(|| {
                    crate::models::ModelError::MissingParameter(format!("{tag}.v.{i}"))
                })?;
                m.push(md.to_vec());
                v.push(vd.to_vec());
            }
            let step = ckpt.get_scalar(&format!("{tag}.step")).ok_or_else(|| {
                crate::models::ModelError::MissingParameter(format!("{tag}.step"))
            })? as u64;
            opt.set_state(m, v, step);
        }
        state.epochs_done = ckpt
            .get_scalar("meta.epoch")
            .ok_or_else(|| crate::models::ModelError::MissingParameter("meta.epoch".into()))?
            as usize;
        Ok(state)
    }
}

/// One training step's losses and learning rates, as written to the log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub epoch: usize,
    pub step: usize,
    pub l_adv_ts: f64,
    pub l_adv_st: f64,
    pub l_cyc: f64,
    pub l_disc_s: f64,
    pub l_disc_t: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

impl fmt::Display for StepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {:.6e} {:.6e} {:.6e} {:.6e} {:.6e} {:.6e} {:.6e}",
            self.epoch,
            self.step,
            self.l_adv_ts,
            self.l_adv_st,
            self.l_cyc,
            self.l_disc_s,
            self.l_disc_t,
            self.lr_g,
            self.lr_d
        )
    }
}

/// Generator update, then each discriminator on freshly detached fakes.
pub fn train_step(
    state: &mut TrainState,
    batch_s: &FeatureBatch,
    batch_t: &FeatureBatch,
    epoch: usize,
    step: usize,
) -> Result<StepReport> {
    let lr_g = lr_at_epoch(&state.cfg, epoch, state.cfg.lr_gen)?;
    let lr_d = lr_at_epoch(&state.cfg, epoch, state.cfg.lr_disc)?;

    let numeric_failure = |what: &str| TrainError::NumericFailure {
        what: what.to_string(),
        epoch,
        step,
        batch_ids: batch_s
            .utt_ids
            .iter()
            .chain(&batch_t.utt_ids)
            .cloned()
            .collect(),
    };

    state.opt_g.zero_grad();
    state.opt_ds.zero_grad();
    state.opt_dt.zero_grad();
    let gl = total_generator_loss(
        &state.cfg,
        &state.g_st,
        &state.g_ts,
        &state.d_s,
        &state.d_t,
        &batch_s.tensor,
        &batch_t.tensor,
    )?;
    if !gl.total.item().is_finite() {
        return Err(numeric_failure("generator loss"));
    }
    backward(&gl.total)?;
    state.opt_g.step(lr_g)?;

    // discriminator grads accumulated through the adversarial terms are
    // stale; clear them before each discriminator's own update
    state.opt_ds.zero_grad();
    let l_ds = disc_loss(&state.d_s, &state.g_ts, &batch_s.tensor, &batch_t.tensor)?;
    if !l_ds.item().is_finite() {
        return Err(numeric_failure("source discriminator loss"));
    }
    backward(&l_ds)?;
    state.opt_ds.step(lr_d)?;

    state.opt_dt.zero_grad();
    let l_dt = disc_loss(&state.d_t, &state.g_st, &batch_t.tensor, &batch_s.tensor)?;
    if !l_dt.item().is_finite() {
        return Err(numeric_failure("target discriminator loss"));
    }
    backward(&l_dt)?;
    state.opt_dt.step(lr_d)?;

    Ok(StepReport {
        epoch,
        step,
        l_adv_ts: gl.adv_ts,
        l_adv_st: gl.adv_st,
        l_cyc: gl.cyc,
        l_disc_s: l_ds.item(),
        l_disc_t: l_dt.item(),
        lr_g,
        lr_d,
    })
}

/// Fresh run: initializes from `cfg.seed` and trains all epochs, writing
/// `epoch_NNN.fmap` and appending to `train.log` under `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    source: &FeatureStore,
    target: &FeatureStore,
    out_dir: &Path,
) -> Result<TrainState> {
    train_until(cfg, source, target, out_dir, cfg.epochs)
}

/// Like `train` but stops after `last_epoch`, e.g. to exercise resume.
/// The schedule still spans the full `cfg.epochs`.
pub fn train_until(
    cfg: &TrainConfig,
    source: &FeatureStore,
    target: &FeatureStore,
    out_dir: &Path,
    last_epoch: usize,
) -> Result<TrainState> {
    let mut state = TrainState::new(cfg);
    run_epochs(&mut state, source, target, out_dir, last_epoch)?;
    Ok(state)
}

/// Continues a run from a saved checkpoint. Epoch-indexed RNG streams make
/// the continuation bit-exact with an uninterrupted run.
pub fn train_resume(
    cfg: &TrainConfig,
    source: &FeatureStore,
    target: &FeatureStore,
    out_dir: &Path,
    ckpt_path: &Path,
) -> Result<TrainState> {
    let ckpt = crate::models::load_checkpoint(ckpt_path)?;
    let saved_seed = ckpt
        .get_scalar("meta.seed")
        .ok_or_else(|| crate::models::ModelError::MissingParameter("meta.seed".into()))?
        as u64;
    if saved_seed != cfg.seed {
        return Err(TrainError::InvalidConfig(format!(
            "checkpoint was trained with seed {saved_seed}, config says {}",
            cfg.seed
        )));
    }
    let mut state = TrainState::from_checkpoint(cfg, &ckpt)?;
    run_epochs(&mut state, source, target, out_dir, cfg.epochs)?;
    Ok(state)
}

fn run_epochs(
    state: &mut TrainState,
    source: &FeatureStore,
    target: &FeatureStore,
    out_dir: &Path,
    last_epoch: usize,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_dir.join("train.log"))?;
    let cfg = state.cfg.clone();
    let steps_per_epoch = source.len().div_ceil(cfg.batch_size);

    for epoch in state.epochs_done + 1..=last_epoch.min(cfg.epochs) {
        let mut rng_s =
            ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, &format!("source.{epoch}")));
        let mut rng_t =
            ChaCha20Rng::seed_from_u64(sub_seed(cfg.seed, &format!("target.{epoch}")));
        for step in 1..=steps_per_epoch {
            let batch_s = sample_batch(source, &cfg, &mut rng_s)?;
            let batch_t = sample_batch(target, &cfg, &mut rng_t)?;
            let report = train_step(state, &batch_s, &batch_t, epoch, step)?;
            writeln!(log, "{report}")?;
        }
        state.epochs_done = epoch;
        save_checkpoint(&checkpoint_path(out_dir, epoch), &state.to_checkpoint())?;
    }
    Ok(())
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch_{epoch:03}.fmap"))
}
