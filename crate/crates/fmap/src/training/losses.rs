//! Least-squares GAN losses and L1 cycle consistency.

use crate::autodiff::{add, mean_abs, mean_square, scale, Tensor};
use crate::models::{Discriminator, Generator};

use super::{Result, TrainConfig};

/// Discriminator objective: fakes pushed to 0, reals to 1. The fake batch
/// is detached, so no gradient reaches the generator.
pub fn disc_loss(
    d: &Discriminator,
    g: &Generator,
    real: &Tensor,
    other: &Tensor,
) -> Result<Tensor> {
    let fake = g.forward(other)?.detach();
    let l_fake = mean_square(&d.forward(&fake)?, 0.0);
    let l_real = mean_square(&d.forward(real)?, 1.0);
    Ok(add(&l_fake, &l_real)?)
}

/// Generator adversarial objective: mapped features pushed to score 1.
pub fn adv_loss(d: &Discriminator, g: &Generator, x: &Tensor) -> Result<Tensor> {
    Ok(mean_square(&d.forward(&g.forward(x)?)?, 1.0))
}

/// L1 reconstruction through both mapping directions.
pub fn cycle_loss(
    g_st: &Generator,
    g_ts: &Generator,
    x_s: &Tensor,
    x_t: &Tensor,
) -> Result<Tensor> {
    let rec_s = g_ts.forward(&g_st.forward(x_s)?)?;
    let rec_t = g_st.forward(&g_ts.forward(x_t)?)?;
    Ok(add(&mean_abs(&rec_s, x_s)?, &mean_abs(&rec_t, x_t)?)?)
}

pub struct GeneratorLosses {
    /// Weighted total, still attached to the graph.
    pub total: Tensor,
    pub adv_ts: f64,
    pub adv_st: f64,
    pub cyc: f64,
}

/// Weighted generator objective. The fake batches are shared between the
/// adversarial and cycle terms, so each generator runs twice per call.
pub fn total_generator_loss(
    cfg: &TrainConfig,
    g_st: &Generator,
    g_ts: &Generator,
    d_s: &Discriminator,
    d_t: &Discriminator,
    x_s: &Tensor,
    x_t: &Tensor,
) -> Result<GeneratorLosses> {
    let fake_t = g_st.forward(x_s)?;
    let fake_s = g_ts.forward(x_t)?;

    let adv_st = mean_square(&d_t.forward(&fake_t)?, 1.0);
    let adv_ts = mean_square(&d_s.forward(&fake_s)?, 1.0);

    let rec_s = g_ts.forward(&fake_t)?;
    let rec_t = g_st.forward(&fake_s)?;
    let cyc = add(&mean_abs(&rec_s, x_s)?, &mean_abs(&rec_t, x_t)?)?;

    let total = add(
        &scale(&add(&adv_ts, &adv_st)?, cfg.lambda_adv),
        &scale(&cyc, cfg.lambda_cyc),
    )?;
    Ok(GeneratorLosses {
        total,
        adv_ts: adv_ts.item(),
        adv_st: adv_st.item(),
        cyc: cyc.item(),
    })
}
