//! The feature-mapping generator, its residual blocks, and the patch
//! discriminator, plus bit-exact checkpoint serialization.
//!
//! Generator: downsampler (3x3 convs, the stride-2 ones halving each axis
//! with ceil rounding), a stack of 128-channel residual blocks, an
//! upsampler of transposed convs, and a final 3x3 conv whose output is
//! added to the input shortcut. With `zero_init_last` the final conv starts
//! at zero, so the whole network is the identity map at initialization.
//!
//! Discriminator: five 4x4 convs (strides 2,2,2,1,1), LeakyReLU(0.2)
//! everywhere except the raw final score map.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::autodiff::{
    activation, add, conv2d, conv2d_padded, conv_transpose2d, instance_norm, Activation, Tensor,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input too small: spatial size {h}x{w}, minimum {min}x{min}")]
    InputTooSmall { h: usize, w: usize, min: usize },
    #[error(transparent)]
    Tensor(#[from] crate::autodiff::TensorError),
    #[error("checkpoint is missing parameter {0}")]
    MissingParameter(String),
    #[error("parameter {name}: shape {found:?} does not match model {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

const INIT_STD: f64 = 0.02;
const IN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub n_resblocks: usize,
    pub zero_init_last: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            base_channels: 32,
            n_resblocks: 9,
            zero_init_last: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorSpec {
    pub channels: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            channels: vec![64, 128, 256, 512, 1],
            leaky_slope: 0.2,
        }
    }
}

struct Conv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv {
    fn new(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, rng: &mut ChaCha20Rng) -> Conv {
        Conv {
            weight: Tensor::randn(&[cout, cin, k, k], INIT_STD, rng).requires_grad(),
            bias: Tensor::zeros(&[cout]).requires_grad(),
            stride,
            padding,
        }
    }

    fn zeroed(cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Conv {
        Conv {
            weight: Tensor::zeros(&[cout, cin, k, k]).requires_grad(),
            bias: Tensor::zeros(&[cout]).requires_grad(),
            stride,
            padding,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(conv2d(x, &self.weight, &self.bias, self.stride, self.padding)?)
    }
}

/// Transposed conv; weight is `[cin, cout, k, k]`.
struct Deconv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Deconv {
    fn new(cin: usize, cout: usize, k: usize, stride: usize, padding: usize, rng: &mut ChaCha20Rng) -> Deconv {
        Deconv {
            weight: Tensor::randn(&[cin, cout, k, k], INIT_STD, rng).requires_grad(),
            bias: Tensor::zeros(&[cout]).requires_grad(),
            stride,
            padding,
        }
    }

    fn forward(&self, x: &Tensor, output_padding: (usize, usize)) -> Result<Tensor> {
        Ok(conv_transpose2d(
            x,
            &self.weight,
            &self.bias,
            self.stride,
            self.padding,
            output_padding,
        )?)
    }
}

struct InstNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl InstNorm {
    fn new(channels: usize) -> InstNorm {
        InstNorm {
            gamma: Tensor::full(&[channels], 1.0).requires_grad(),
            beta: Tensor::zeros(&[channels]).requires_grad(),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(instance_norm(x, &self.gamma, &self.beta, IN_EPS)?)
    }
}

struct ResBlock {
    conv1: Conv,
    in1: InstNorm,
    conv2: Conv,
    in2: InstNorm,
}

impl ResBlock {
    fn new(channels: usize, rng: &mut ChaCha20Rng) -> ResBlock {
        ResBlock {
            conv1: Conv::new(channels, channels, 3, 1, 1, rng),
            in1: InstNorm::new(channels),
            conv2: Conv::new(channels, channels, 3, 1, 1, rng),
            in2: InstNorm::new(channels),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = activation(&self.in1.forward(&self.conv1.forward(x)?)?, Activation::Relu);
        let h = self.in2.forward(&self.conv2.forward(&h)?)?;
        Ok(add(&h, x)?)
    }
}

pub struct Generator {
    spec: GeneratorSpec,
    conv_in: Conv,
    down1: Conv,
    in_d1: InstNorm,
    down2: Conv,
    in_d2: InstNorm,
    blocks: Vec<ResBlock>,
    up1: Deconv,
    in_u1: InstNorm,
    up2: Deconv,
    in_u2: InstNorm,
    conv_out: Conv,
}

/// Deterministic generator construction from a seed.
pub fn build_generator(spec: &GeneratorSpec, seed: u64) -> Generator {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let base = spec.base_channels;
    let conv_in = Conv::new(1, base, 3, 1, 1, &mut rng);
    let down1 = Conv::new(base, 2 * base, 3, 2, 1, &mut rng);
    let in_d1 = InstNorm::new(2 * base);
    let down2 = Conv::new(2 * base, 4 * base, 3, 2, 1, &mut rng);
    let in_d2 = InstNorm::new(4 * base);
    let blocks = (0..spec.n_resblocks)
        .map(|_| ResBlock::new(4 * base, &mut rng))
        .collect();
    let up1 = Deconv::new(4 * base, 2 * base, 3, 2, 1, &mut rng);
    let in_u1 = InstNorm::new(2 * base);
    let up2 = Deconv::new(2 * base, base, 3, 2, 1, &mut rng);
    let in_u2 = InstNorm::new(base);
    let conv_out = if spec.zero_init_last {
        Conv::zeroed(base, 1, 3, 1, 1)
    } else {
        Conv::new(base, 1, 3, 1, 1, &mut rng)
    };
    Generator {
        spec: spec.clone(),
        conv_in,
        down1,
        in_d1,
        down2,
        in_d2,
        blocks,
        up1,
        in_u1,
        up2,
        in_u2,
        conv_out,
    }
}

impl Generator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Maps `[B,1,H,W]` to the same shape. Stride-2 stages halve each axis
    /// with ceil rounding; each deconv picks output padding per axis to
    /// restore the exact recorded size, so any H,W >= 8 round-trips.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.0)
    }

    /// Forward pass that also reports the actual bottleneck shape (after the
    /// second stride-2 conv), for conformance checks.
    pub fn forward_traced(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(crate::autodiff::TensorError::Invalid {
                op: "generator_forward",
                msg: format!("expected [B,1,H,W], got {s:?}"),
            }
            .into());
        }
        let (h0, w0) = (s[2], s[3]);
        if h0 < 8 || w0 < 8 {
            return Err(ModelError::InputTooSmall {
                h: h0,
                w: w0,
                min: 8,
            });
        }

        let h = activation(&self.conv_in.forward(x)?, Activation::Relu);
        let h = activation(&self.in_d1.forward(&self.down1.forward(&h)?)?, Activation::Relu);
        let (h1, w1) = (h.shape()[2], h.shape()[3]);
        let h = activation(&self.in_d2.forward(&self.down2.forward(&h)?)?, Activation::Relu);
        let bottleneck = h.shape().to_vec();

        let mut h = h;
        for block in &self.blocks {
            h = activation(&block.forward(&h)?, Activation::Relu);
        }

        let op1 = output_padding_for(h.shape()[2], h1, h.shape()[3], w1);
        let h = activation(&self.in_u1.forward(&self.up1.forward(&h, op1)?)?, Activation::Relu);
        let op2 = output_padding_for(h.shape()[2], h0, h.shape()[3], w0);
        let h = activation(&self.in_u2.forward(&self.up2.forward(&h, op2)?)?, Activation::Relu);

        let h = self.conv_out.forward(&h)?;
        Ok((add(&h, x)?, bottleneck))
    }

    /// Spatial shape at the deepest point of the downsampler (two ceil
    /// halvings), exposed for conformance checks.
    pub fn bottleneck_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        let ceil2 = |n: usize| n.div_ceil(2);
        (4 * self.spec.base_channels, ceil2(ceil2(h)), ceil2(ceil2(w)))
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = Vec::new();
        let mut push = |name: &str, t: &Tensor| out.push((name.to_string(), t.clone()));
        push("conv_in.weight", &self.conv_in.weight);
        push("conv_in.bias", &self.conv_in.bias);
        push("down1.weight", &self.down1.weight);
        push("down1.bias", &self.down1.bias);
        push("in_d1.gamma", &self.in_d1.gamma);
        push("in_d1.beta", &self.in_d1.beta);
        push("down2.weight", &self.down2.weight);
        push("down2.bias", &self.down2.bias);
        push("in_d2.gamma", &self.in_d2.gamma);
        push("in_d2.beta", &self.in_d2.beta);
        for (i, b) in self.blocks.iter().enumerate() {
            push(&format!("block{i}.conv1.weight"), &b.conv1.weight);
            push(&format!("block{i}.conv1.bias"), &b.conv1.bias);
            push(&format!("block{i}.in1.gamma"), &b.in1.gamma);
            push(&format!("block{i}.in1.beta"), &b.in1.beta);
            push(&format!("block{i}.conv2.weight"), &b.conv2.weight);
            push(&format!("block{i}.conv2.bias"), &b.conv2.bias);
            push(&format!("block{i}.in2.gamma"), &b.in2.gamma);
            push(&format!("block{i}.in2.beta"), &b.in2.beta);
        }
        push("up1.weight", &self.up1.weight);
        push("up1.bias", &self.up1.bias);
        push("in_u1.gamma", &self.in_u1.gamma);
        push("in_u1.beta", &self.in_u1.beta);
        push("up2.weight", &self.up2.weight);
        push("up2.bias", &self.up2.bias);
        push("in_u2.gamma", &self.in_u2.gamma);
        push("in_u2.beta", &self.in_u2.beta);
        push("conv_out.weight", &self.conv_out.weight);
        push("conv_out.bias", &self.conv_out.bias);
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

fn output_padding_for(h_in: usize, h_target: usize, w_in: usize, w_target: usize) -> (usize, usize) {
    // stride-2 3x3 deconv with padding 1 produces 2n-1; output padding
    // restores the recorded pre-downsample size exactly
    let oph = h_target - (2 * h_in - 1);
    let opw = w_target - (2 * w_in - 1);
    debug_assert!(oph <= 1 && opw <= 1);
    (oph, opw)
}

pub struct Discriminator {
    spec: DiscriminatorSpec,
    convs: Vec<Conv>,
}

/// Deterministic discriminator construction from a seed.
pub fn build_discriminator(spec: &DiscriminatorSpec, seed: u64) -> Discriminator {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let strides = [2, 2, 2, 1, 1];
    let mut convs = Vec::new();
    let mut cin = 1;
    for (i, &cout) in spec.channels.iter().enumerate() {
        convs.push(Conv::new(cin, cout, 4, strides[i.min(4)], 0, &mut rng));
        cin = cout;
    }
    Discriminator {
        spec: spec.clone(),
        convs,
    }
}

impl Discriminator {
    /// Maps `[B,1,H,W]` to a raw patch score map `[B,1,H',W']`, H' and W'
    /// being three ceil halvings of the input. No output activation.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(crate::autodiff::TensorError::Invalid {
                op: "discriminator_forward",
                msg: format!("expected [B,1,H,W], got {s:?}"),
            }
            .into());
        }
        if s[2] < 16 || s[3] < 16 {
            return Err(ModelError::InputTooSmall {
                h: s[2],
                w: s[3],
                min: 16,
            });
        }
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            // 4x4 kernels with (1,2) padding: stride 2 gives ceil(n/2),
            // stride 1 preserves the size
            h = conv2d_padded(&h, &conv.weight, &conv.bias, conv.stride, (1, 2), (1, 2))?;
            if i != last {
                h = activation(&h, Activation::LeakyRelu(self.spec.leaky_slope));
            }
        }
        Ok(h)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), c.weight.clone()));
            out.push((format!("conv{i}.bias"), c.bias.clone()));
        }
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

/// Copies checkpoint tensors under `prefix` into live parameters.
pub fn load_params(
    params: &[(String, Tensor)],
    ckpt: &Checkpoint,
    prefix: &str,
) -> Result<()> {
    for (name, tensor) in params {
        let full = format!("{prefix}.{name}");
        let entry = ckpt
            .tensors
            .iter()
            .find(|(n, _, _)| *n == full)
            .ok_or_else(|| ModelError::MissingParameter(full.clone()))?;
        if entry.1 != tensor.shape() {
            return Err(ModelError::ParameterShape {
                name: full,
                expected: tensor.shape().to_vec(),
                found: entry.1.clone(),
            });
        }
        tensor.set_data(entry.2.clone());
    }
    Ok(())
}
