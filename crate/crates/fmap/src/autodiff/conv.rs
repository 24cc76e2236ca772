//! 2-D convolution, its transpose, and their gradients.
//!
//! Plain nested loops over row-major buffers. Desk-scale inputs in f64;
//! no im2col, no vectorization tricks.

use std::collections::HashMap;

use super::{check_finite, invalid, OpNode, Result, Tensor, TensorError};

fn dims4(op: &'static str, t: &Tensor, role: &str) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(invalid(
            op,
            format!("{role} must be rank 4, got shape {s:?}"),
        ));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

pub(crate) fn conv_out_len(n: usize, pad: (usize, usize), k: usize, stride: usize) -> usize {
    (n + pad.0 + pad.1 - k) / stride + 1
}

/// `conv2d` with symmetric zero padding on both spatial axes.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    conv2d_padded(input, weight, bias, stride, (padding, padding), (padding, padding))
}

/// Cross-correlation of `input` `[B,Cin,H,W]` with `weight` `[Cout,Cin,kh,kw]`
/// plus `bias` `[Cout]`, with per-side zero padding `(before, after)` on each
/// spatial axis. Output is `[B,Cout,H',W']` with
/// `H' = floor((H + pad_h.0 + pad_h.1 - kh)/stride) + 1`.
pub fn conv2d_padded(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad_h: (usize, usize),
    pad_w: (usize, usize),
) -> Result<Tensor> {
    const OP: &str = "conv2d";
    if stride == 0 {
        return Err(invalid(OP, "stride must be positive"));
    }
    let (bn, ci_n, h, w) = dims4(OP, input, "input")?;
    let (co_n, ci_w, kh, kw) = dims4(OP, weight, "weight")?;
    if ci_w != ci_n {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            axis: 1,
            left: ci_n,
            right: ci_w,
        });
    }
    if bias.shape() != [co_n] {
        return Err(invalid(
            OP,
            format!("bias shape {:?}, expected [{co_n}]", bias.shape()),
        ));
    }
    if kh > h + pad_h.0 + pad_h.1 || kw > w + pad_w.0 + pad_w.1 {
        return Err(invalid(
            OP,
            format!("kernel {kh}x{kw} larger than padded input {h}x{w}"),
        ));
    }
    let ho = conv_out_len(h, pad_h, kh, stride);
    let wo = conv_out_len(w, pad_w, kw, stride);

    let x = input.data();
    let wt = weight.data();
    let bs = bias.data();
    let mut out = vec![0.0; bn * co_n * ho * wo];
    for b in 0..bn {
        for co in 0..co_n {
            let out_base = (b * co_n + co) * ho * wo;
            out[out_base..out_base + ho * wo].fill(bs[co]);
            for ci in 0..ci_n {
                let x_base = (b * ci_n + ci) * h * w;
                let w_base = (co * ci_n + ci) * kh * kw;
                for oh in 0..ho {
                    let ih0 = (oh * stride) as isize - pad_h.0 as isize;
                    let o_row = out_base + oh * wo;
                    for dkh in 0..kh {
                        let ih = ih0 + dkh as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let x_row = x_base + ih as usize * w;
                        let w_row = w_base + dkh * kw;
                        for ow in 0..wo {
                            let iw0 = (ow * stride) as isize - pad_w.0 as isize;
                            let mut acc = 0.0;
                            for dkw in 0..kw {
                                let iw = iw0 + dkw as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc += x[x_row + iw as usize] * wt[w_row + dkw];
                            }
                            out[o_row + ow] += acc;
                        }
                    }
                }
            }
        }
    }
    check_finite(OP, &out);
    drop(x);
    drop(wt);
    drop(bs);
    Ok(Tensor::from_op(
        vec![bn, co_n, ho, wo],
        out,
        OpNode::Conv2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            pad_h,
            pad_w,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad_h: (usize, usize),
    pad_w: (usize, usize),
    g_out: &[f64],
    adjoint: &mut HashMap<usize, Vec<f64>>,
) {
    let (bn, ci_n, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co_n, _, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let ho = conv_out_len(h, pad_h, kh, stride);
    let wo = conv_out_len(w, pad_w, kw, stride);

    let need_input = input.is_requires_grad() || input.inner.op.is_some();
    let need_weight = weight.is_requires_grad();
    let need_bias = bias.is_requires_grad();

    let x = input.data();
    let wt = weight.data();

    if need_bias {
        let mut g_bias = vec![0.0; co_n];
        for b in 0..bn {
            for co in 0..co_n {
                let base = (b * co_n + co) * ho * wo;
                g_bias[co] += g_out[base..base + ho * wo].iter().sum::<f64>();
            }
        }
        super::accumulate(adjoint, bias, g_bias);
    }

    let mut g_input = if need_input {
        Some(vec![0.0; bn * ci_n * h * w])
    } else {
        None
    };
    let mut g_weight = if need_weight {
        Some(vec![0.0; weight.len()])
    } else {
        None
    };
    if need_input || need_weight {
        for b in 0..bn {
            for co in 0..co_n {
                let out_base = (b * co_n + co) * ho * wo;
                for ci in 0..ci_n {
                    let x_base = (b * ci_n + ci) * h * w;
                    let w_base = (co * ci_n + ci) * kh * kw;
                    for oh in 0..ho {
                        let ih0 = (oh * stride) as isize - pad_h.0 as isize;
                        let o_row = out_base + oh * wo;
                        for dkh in 0..kh {
                            let ih = ih0 + dkh as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let x_row = x_base + ih as usize * w;
                            let w_row = w_base + dkh * kw;
                            for ow in 0..wo {
                                let iw0 = (ow * stride) as isize - pad_w.0 as isize;
                                let g = g_out[o_row + ow];
                                if g == 0.0 {
                                    continue;
                                }
                                for dkw in 0..kw {
                                    let iw = iw0 + dkw as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    if let Some(gi) = g_input.as_mut() {
                                        gi[x_row + iw as usize] += g * wt[w_row + dkw];
                                    }
                                    if let Some(gw) = g_weight.as_mut() {
                                        gw[w_row + dkw] += g * x[x_row + iw as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    drop(x);
    drop(wt);
    if let Some(gi) = g_input {
        super::accumulate(adjoint, input, gi);
    }
    if let Some(gw) = g_weight {
        super::accumulate(adjoint, weight, gw);
    }
}

/// Transposed convolution: the adjoint of `conv2d` with the same `stride`
/// and (symmetric) `padding`. `input` is `[B,Cin,H,W]`, `weight` is
/// `[Cin,Cout,kh,kw]`. Output spatial size is
/// `(H-1)*stride - 2*padding + kh + output_padding.0` (same for width with
/// `output_padding.1`).
pub fn conv_transpose2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: (usize, usize),
) -> Result<Tensor> {
    const OP: &str = "conv_transpose2d";
    if stride == 0 {
        return Err(invalid(OP, "stride must be positive"));
    }
    if output_padding.0 >= stride || output_padding.1 >= stride {
        return Err(invalid(
            OP,
            format!(
                "output_padding {:?} must be < stride {stride}",
                output_padding
            ),
        ));
    }
    let (bn, ci_n, h, w) = dims4(OP, input, "input")?;
    let (ci_w, co_n, kh, kw) = dims4(OP, weight, "weight")?;
    if ci_w != ci_n {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            axis: 1,
            left: ci_n,
            right: ci_w,
        });
    }
    if bias.shape() != [co_n] {
        return Err(invalid(
            OP,
            format!("bias shape {:?}, expected [{co_n}]", bias.shape()),
        ));
    }
    let ho = ((h - 1) * stride + kh + output_padding.0)
        .checked_sub(2 * padding)
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(OP, "non-positive output height"))?;
    let wo = ((w - 1) * stride + kw + output_padding.1)
        .checked_sub(2 * padding)
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(OP, "non-positive output width"))?;

    let x = input.data();
    let wt = weight.data();
    let bs = bias.data();
    let mut out = vec![0.0; bn * co_n * ho * wo];
    for b in 0..bn {
        for co in 0..co_n {
            let base = (b * co_n + co) * ho * wo;
            out[base..base + ho * wo].fill(bs[co]);
        }
    }
    for b in 0..bn {
        for ci in 0..ci_n {
            let x_base = (b * ci_n + ci) * h * w;
            for co in 0..co_n {
                let out_base = (b * co_n + co) * ho * wo;
                let w_base = (ci * co_n + co) * kh * kw;
                for ih in 0..h {
                    let oh0 = (ih * stride) as isize - padding as isize;
                    let x_row = x_base + ih * w;
                    for dkh in 0..kh {
                        let oh = oh0 + dkh as isize;
                        if oh < 0 || oh >= ho as isize {
                            continue;
                        }
                        let o_row = out_base + oh as usize * wo;
                        let w_row = w_base + dkh * kw;
                        for iw in 0..w {
                            let xv = x[x_row + iw];
                            if xv == 0.0 {
                                continue;
                            }
                            let ow0 = (iw * stride) as isize - padding as isize;
                            for dkw in 0..kw {
                                let ow = ow0 + dkw as isize;
                                if ow < 0 || ow >= wo as isize {
                                    continue;
                                }
                                out[o_row + ow as usize] += xv * wt[w_row + dkw];
                            }
                        }
                    }
                }
            }
        }
    }
    check_finite(OP, &out);
    drop(x);
    drop(wt);
    drop(bs);
    Ok(Tensor::from_op(
        vec![bn, co_n, ho, wo],
        out,
        OpNode::ConvTranspose2d {
            input: input.clone(),
            weight: weight.clone(),
            bias: bias.clone(),
            stride,
            padding,
            output_padding,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: (usize, usize),
    g_out: &[f64],
    adjoint: &mut HashMap<usize, Vec<f64>>,
) {
    let (bn, ci_n, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co_n, kh, kw) = (weight.shape()[1], weight.shape()[2], weight.shape()[3]);
    let ho = (h - 1) * stride + kh + output_padding.0 - 2 * padding;
    let wo = (w - 1) * stride + kw + output_padding.1 - 2 * padding;

    let need_input = input.is_requires_grad() || input.inner.op.is_some();
    let need_weight = weight.is_requires_grad();
    let need_bias = bias.is_requires_grad();

    if need_bias {
        let mut g_bias = vec![0.0; co_n];
        for b in 0..bn {
            for co in 0..co_n {
                let base = (b * co_n + co) * ho * wo;
                g_bias[co] += g_out[base..base + ho * wo].iter().sum::<f64>();
            }
        }
        super::accumulate(adjoint, bias, g_bias);
    }

    let x = input.data();
    let wt = weight.data();
    let mut g_input = if need_input {
        Some(vec![0.0; input.len()])
    } else {
        None
    };
    let mut g_weight = if need_weight {
        Some(vec![0.0; weight.len()])
    } else {
        None
    };
    if need_input || need_weight {
        for b in 0..bn {
            for ci in 0..ci_n {
                let x_base = (b * ci_n + ci) * h * w;
                for co in 0..co_n {
                    let out_base = (b * co_n + co) * ho * wo;
                    let w_base = (ci * co_n + co) * kh * kw;
                    for ih in 0..h {
                        let oh0 = (ih * stride) as isize - padding as isize;
                        let x_row = x_base + ih * w;
                        for dkh in 0..kh {
                            let oh = oh0 + dkh as isize;
                            if oh < 0 || oh >= ho as isize {
                                continue;
                            }
                            let o_row = out_base + oh as usize * wo;
                            let w_row = w_base + dkh * kw;
                            for iw in 0..w {
                                let ow0 = (iw * stride) as isize - padding as isize;
                                for dkw in 0..kw {
                                    let ow = ow0 + dkw as isize;
                                    if ow < 0 || ow >= wo as isize {
                                        continue;
                                    }
                                    let g = g_out[o_row + ow as usize];
                                    if let Some(gi) = g_input.as_mut() {
                                        gi[x_row + iw] += g * wt[w_row + dkw];
                                    }
                                    if let Some(gw) = g_weight.as_mut() {
                                        gw[w_row + dkw] += g * x[x_row + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    drop(x);
    drop(wt);
    if let Some(gi) = g_input {
        super::accumulate(adjoint, input, gi);
    }
    if let Some(gw) = g_weight {
        super::accumulate(adjoint, weight, gw);
    }
}
