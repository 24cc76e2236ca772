//! Instance normalization with learnable per-channel affine parameters.

use std::collections::HashMap;

use super::{check_finite, invalid, OpNode, Result, Tensor, TensorError};

/// Normalizes each (sample, channel) plane of `[B,C,H,W]` to zero mean and
/// unit variance over H*W, then applies `gamma * xhat + beta`.
pub fn instance_norm(input: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    const OP: &str = "instance_norm";
    let s = input.shape();
    if s.len() != 4 {
        return Err(invalid(OP, format!("input must be rank 4, got {s:?}")));
    }
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h * w < 2 {
        return Err(invalid(OP, "spatial size must be at least 2"));
    }
    if gamma.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            axis: 1,
            left: c,
            right: gamma.len(),
        });
    }
    if beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            axis: 1,
            left: c,
            right: beta.len(),
        });
    }

    let x = input.data();
    let g = gamma.data();
    let bt = beta.data();
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    let mut means = vec![0.0; bn * c];
    let mut inv_stds = vec![0.0; bn * c];
    for b in 0..bn {
        for ci in 0..c {
            let base = (b * c + ci) * plane;
            let xs = &x[base..base + plane];
            let mean = xs.iter().sum::<f64>() / plane as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            means[b * c + ci] = mean;
            inv_stds[b * c + ci] = inv_std;
            let (gc, bc) = (g[ci], bt[ci]);
            for (o, v) in out[base..base + plane].iter_mut().zip(xs) {
                *o = gc * (v - mean) * inv_std + bc;
            }
        }
    }
    check_finite(OP, &out);
    drop(x);
    drop(g);
    drop(bt);
    Ok(Tensor::from_op(
        s.to_vec(),
        out,
        OpNode::InstanceNorm {
            input: input.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            mean: means,
            inv_std: inv_stds,
        },
    ))
}

pub(crate) fn instance_norm_backward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    means: &[f64],
    inv_stds: &[f64],
    g_out: &[f64],
    adjoint: &mut HashMap<usize, Vec<f64>>,
) {
    let s = input.shape();
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;

    let need_input = input.is_requires_grad() || input.inner.op.is_some();
    let need_gamma = gamma.is_requires_grad();
    let need_beta = beta.is_requires_grad();

    let x = input.data();
    let g = gamma.data();
    let mut g_input = if need_input {
        Some(vec![0.0; input.len()])
    } else {
        None
    };
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];

    for b in 0..bn {
        for ci in 0..c {
            let base = (b * c + ci) * plane;
            let mean = means[b * c + ci];
            let inv_std = inv_stds[b * c + ci];
            let xs = &x[base..base + plane];
            let gs = &g_out[base..base + plane];

            let mut sum_g = 0.0;
            let mut sum_g_xhat = 0.0;
            for (&xi, &gi) in xs.iter().zip(gs) {
                let xhat = (xi - mean) * inv_std;
                sum_g += gi;
                sum_g_xhat += gi * xhat;
            }
            g_gamma[ci] += sum_g_xhat;
            g_beta[ci] += sum_g;

            if let Some(gi_buf) = g_input.as_mut() {
                let gc = g[ci];
                let m = plane as f64;
                let mean_dxhat = gc * sum_g / m;
                let mean_dxhat_xhat = gc * sum_g_xhat / m;
                for (k, (&xi, &go)) in xs.iter().zip(gs).enumerate() {
                    let xhat = (xi - mean) * inv_std;
                    gi_buf[base + k] =
                        inv_std * (gc * go - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
    }
    drop(x);
    drop(g);
    if let Some(gi) = g_input {
        super::accumulate(adjoint, input, gi);
    }
    if need_gamma {
        super::accumulate(adjoint, gamma, g_gamma);
    }
    if need_beta {
        super::accumulate(adjoint, beta, g_beta);
    }
}
