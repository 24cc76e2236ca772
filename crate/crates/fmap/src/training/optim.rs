//! Adam with bias correction. Parameters are updated in place between
//! graph builds via `set_data`.

use crate::autodiff::Tensor;

use super::{Result, TrainError};

pub struct Adam {
    params: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step_count: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, beta1: f64, beta2: f64, eps: f64) -> Adam {
        let m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            params,
            m,
            v,
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One update. Parameters without an accumulated gradient are left
    /// alone (their moments do not advance either). Non-finite gradients
    /// abort the run.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TrainError::NonFiniteGradient { index: i });
            }
            let mut data = p.to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                data[j] -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
            p.set_data(data);
        }
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Restores moments and step counter from a checkpoint.
    pub fn set_state(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, step_count: u64) {
        assert_eq!(m.len(), self.params.len());
        assert_eq!(v.len(), self.params.len());
        self.m = m;
        self.v = v;
        self.step_count = step_count;
    }
}
