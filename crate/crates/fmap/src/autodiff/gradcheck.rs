//! Central finite-difference gradient checking.
//!
//! Test oracle, independent of the backward pass: it only re-runs the
//! forward closure under elementwise perturbations. Used by the unit tests
//! and the acceptance suite.

use super::Tensor;

/// Default perturbation step.
pub const STEP: f64 = 1e-5;

/// Compares analytic gradients of `f` (a scalar-valued forward pass over
/// `params`) against central finite differences. Returns the largest
/// relative error over all parameter elements.
pub fn max_rel_error(params: &[Tensor], f: &dyn Fn() -> Tensor) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let loss = f();
    super::backward(&loss).expect("backward failed in gradcheck");

    let mut worst = 0.0f64;
    for p in params {
        let analytic = p
            .grad()
            .unwrap_or_else(|| vec![0.0; p.len()]);
        let base = p.to_vec();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += STEP;
            p.set_data(plus);
            let f_plus = f().item();

            let mut minus = base.clone();
            minus[i] -= STEP;
            p.set_data(minus);
            let f_minus = f().item();

            p.set_data(base.clone());
            let numeric = (f_plus - f_minus) / (2.0 * STEP);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
    }
    worst
}
