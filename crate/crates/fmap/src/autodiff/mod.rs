//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Exactly the operation set the feature-mapping networks need: 2-D
//! convolution and its transpose, instance normalization, pointwise
//! activations, addition, and the two scalar reductions used by the losses.
//! Everything is 64-bit; forward results are NaN-checked in debug builds.
//!
//! A tensor owns its data and, when produced by an operation, a record of
//! that operation and its inputs. `backward` walks the resulting DAG once in
//! reverse topological order and accumulates gradients into every tensor
//! with `requires_grad` set. Graphs are thread-confined (`Rc` handles);
//! independent graphs may live on different threads.

mod conv;
pub mod gradcheck;
mod norm;

pub use conv::{conv2d, conv2d_padded, conv_transpose2d};
pub use norm::instance_norm;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch on axis {axis}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        axis: usize,
        left: usize,
        right: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

/// Pointwise non-linearity. `Identity` is the "no activation" case used at
/// the discriminator output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Identity => x,
        }
    }

    fn slope_at(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

pub(crate) enum OpNode {
    Add(Tensor, Tensor),
    Scale(Tensor, f64),
    Activation(Tensor, Activation),
    /// mean |a - b|; subgradient of |x| at 0 is 0.
    MeanAbs(Tensor, Tensor),
    /// mean (a - c)^2 against a constant target c.
    MeanSquare(Tensor, f64),
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        pad_h: (usize, usize),
        pad_w: (usize, usize),
    },
    ConvTranspose2d {
        input: Tensor,
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
        output_padding: (usize, usize),
    },
    InstanceNorm {
        input: Tensor,
        gamma: Tensor,
        beta: Tensor,
        /// per (sample, channel): mean and 1/sqrt(var + eps), saved forward.
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Option<OpNode>,
}

/// Dense n-dimensional f64 array, row-major, with optional gradient.
///
/// Cloning a `Tensor` clones the handle, not the storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn check_finite(op: &'static str, data: &[f64]) {
    debug_assert!(
        data.iter().all(|v| v.is_finite()),
        "{op}: non-finite value in forward output"
    );
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<OpNode>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: OpNode) -> Tensor {
        let requires_grad = op_inputs(&op).iter().any(|t| t.is_requires_grad());
        Tensor::new(shape, data, requires_grad, Some(op))
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(invalid("from_vec", "zero-sized dimension"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(invalid(
                "from_vec",
                format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor::new(shape.to_vec(), data, false, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new(vec![1], vec![value], false, None)
    }

    /// Normal(0, std) initialized tensor.
    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha20Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| gauss(rng) * std).collect();
        Tensor::new(shape.to_vec(), data, false, None)
    }

    /// Marks a leaf tensor as a trainable parameter.
    pub fn requires_grad(self) -> Tensor {
        assert!(
            self.inner.op.is_none(),
            "requires_grad may only be set on leaf tensors"
        );
        Tensor::new(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            true,
            None,
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // zero-sized dimensions are rejected at construction
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn is_requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Replaces the stored values in place. Only legal between graphs (the
    /// optimizer step); panics on shape change.
    pub fn set_data(&self, data: Vec<f64>) {
        assert_eq!(data.len(), self.len());
        *self.inner.data.borrow_mut() = data;
    }

    /// Same values, cut loose from the graph. Gradients do not flow past a
    /// detached tensor.
    pub fn detach(&self) -> Tensor {
        Tensor::new(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            false,
            None,
        )
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }
}

/// Box-Muller; two uniform draws per normal keeps the stream layout obvious.
fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn op_inputs(op: &OpNode) -> Vec<&Tensor> {
    match op {
        OpNode::Add(a, b) | OpNode::MeanAbs(a, b) => vec![a, b],
        OpNode::Scale(a, _) | OpNode::Activation(a, _) | OpNode::MeanSquare(a, _) => vec![a],
        OpNode::Conv2d {
            input,
            weight,
            bias,
            ..
        } => vec![input, weight, bias],
        OpNode::ConvTranspose2d {
            input,
            weight,
            bias,
            ..
        } => vec![input, weight, bias],
        OpNode::InstanceNorm {
            input,
            gamma,
            beta,
            ..
        } => vec![input, gamma, beta],
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != b.shape().len() {
        return Err(invalid(
            op,
            format!("rank mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    for (axis, (&l, &r)) in a.shape().iter().zip(b.shape()).enumerate() {
        if l != r {
            return Err(TensorError::ShapeMismatch {
                op,
                axis,
                left: l,
                right: r,
            });
        }
    }
    Ok(())
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    check_finite("add", &data);
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        OpNode::Add(a.clone(), b.clone()),
    ))
}

/// Elementwise multiplication by a constant.
pub fn scale(a: &Tensor, k: f64) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|x| k * x).collect();
    check_finite("scale", &data);
    Tensor::from_op(a.shape().to_vec(), data, OpNode::Scale(a.clone(), k))
}

pub fn activation(a: &Tensor, kind: Activation) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|&x| kind.apply(x)).collect();
    check_finite("activation", &data);
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        OpNode::Activation(a.clone(), kind),
    )
}

/// Mean absolute difference, `mean |a - b|`, as a scalar tensor.
pub fn mean_abs(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mean_abs", a, b)?;
    let n = a.len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).abs())
        .sum();
    let data = vec![sum / n];
    check_finite("mean_abs", &data);
    Ok(Tensor::from_op(
        vec![1],
        data,
        OpNode::MeanAbs(a.clone(), b.clone()),
    ))
}

/// Mean squared deviation from a constant, `mean (a - c)^2`, as a scalar.
pub fn mean_square(a: &Tensor, c: f64) -> Tensor {
    let n = a.len() as f64;
    let sum: f64 = a.data().iter().map(|x| (x - c) * (x - c)).sum();
    let data = vec![sum / n];
    check_finite("mean_square", &data);
    Tensor::from_op(vec![1], data, OpNode::MeanSquare(a.clone(), c))
}

/// Accumulates d(loss)/d(t) into every `requires_grad` tensor reachable
/// from `loss`. Repeated calls accumulate unless gradients are cleared.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.len() != 1 {
        return Err(invalid(
            "backward",
            format!("loss must be scalar, got shape {:?}", loss.shape()),
        ));
    }

    // Post-order DFS; the graph is acyclic by construction, every node is
    // visited exactly once.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashMap<usize, ()> = HashMap::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(loss.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if visited.contains_key(&t.key()) {
            continue;
        }
        visited.insert(t.key(), ());
        stack.push((t.clone(), true));
        if let Some(op) = &t.inner.op {
            for input in op_inputs(op) {
                if input.is_requires_grad() || input.inner.op.is_some() {
                    stack.push((input.clone(), false));
                }
            }
        }
    }

    // Adjoints live in a side table so a second backward pass on the same
    // graph starts from a clean slate.
    let mut adjoint: HashMap<usize, Vec<f64>> = HashMap::new();
    adjoint.insert(loss.key(), vec![1.0]);

    for t in order.iter().rev() {
        let Some(g_out) = adjoint.remove(&t.key()) else {
            continue;
        };
        if t.is_requires_grad() {
            let mut slot = t.inner.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&g_out) {
                        *a += g;
                    }
                }
                None => *slot = Some(g_out.clone()),
            }
        }
        if let Some(op) = &t.inner.op {
            propagate(op, &g_out, &mut adjoint);
        }
    }
    Ok(())
}

fn accumulate(adjoint: &mut HashMap<usize, Vec<f64>>, t: &Tensor, g: Vec<f64>) {
    if !(t.is_requires_grad() || t.inner.op.is_some()) {
        return;
    }
    match adjoint.entry(t.key()) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (a, v) in e.get_mut().iter_mut().zip(&g) {
                *a += v;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(g);
        }
    }
}

fn propagate(op: &OpNode, g_out: &[f64], adjoint: &mut HashMap<usize, Vec<f64>>) {
    match op {
        OpNode::Add(a, b) => {
            accumulate(adjoint, a, g_out.to_vec());
            accumulate(adjoint, b, g_out.to_vec());
        }
        OpNode::Scale(a, k) => {
            accumulate(adjoint, a, g_out.iter().map(|g| g * k).collect());
        }
        OpNode::Activation(a, kind) => {
            let data = a.data();
            let g: Vec<f64> = data
                .iter()
                .zip(g_out)
                .map(|(&x, &g)| g * kind.slope_at(x))
                .collect();
            drop(data);
            accumulate(adjoint, a, g);
        }
        OpNode::MeanAbs(a, b) => {
            let g0 = g_out[0];
            let n = a.len() as f64;
            let da = a.data();
            let db = b.data();
            let ga: Vec<f64> = da
                .iter()
                .zip(db.iter())
                .map(|(x, y)| {
                    let d = x - y;
                    // sign(0) = 0 by convention
                    if d > 0.0 {
                        g0 / n
                    } else if d < 0.0 {
                        -g0 / n
                    } else {
                        0.0
                    }
                })
                .collect();
            let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
            drop(da);
            drop(db);
            accumulate(adjoint, a, ga);
            accumulate(adjoint, b, gb);
        }
        OpNode::MeanSquare(a, c) => {
            let g0 = g_out[0];
            let n = a.len() as f64;
            let da = a.data();
            let ga: Vec<f64> = da.iter().map(|x| g0 * 2.0 * (x - c) / n).collect();
            drop(da);
            accumulate(adjoint, a, ga);
        }
        OpNode::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad_h,
            pad_w,
        } => conv::conv2d_backward(input, weight, bias, *stride, *pad_h, *pad_w, g_out, adjoint),
        OpNode::ConvTranspose2d {
            input,
            weight,
            bias,
            stride,
            padding,
            output_padding,
        } => conv::conv_transpose2d_backward(
            input,
            weight,
            bias,
            *stride,
            *padding,
            *output_padding,
            g_out,
            adjoint,
        ),
        OpNode::InstanceNorm {
            input,
            gamma,
            beta,
            mean,
            inv_std,
        } => norm::instance_norm_backward(input, gamma, beta, mean, inv_std, g_out, adjoint),
    }
}
