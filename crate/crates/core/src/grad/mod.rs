//! Tape-based reverse-mode differentiation over `f64` tensors.
//!
//! Every forward op appends a node holding its output and whatever the
//! backward rule needs. Nodes only reference earlier nodes, so the tape is
//! topologically ordered by construction and [`Tape::backward`] is a single
//! reverse sweep that sums gradients across fan-out.
//!
//! ```
//! use tvconv::grad::{ParamId, Tape};
//! use tvconv::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(ParamId(0), Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
//! let y = tape.relu(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.param(ParamId(0)).unwrap().data(), &[0.0, 1.0]);
//! ```

mod check;
pub(crate) mod kernels;
pub mod suite;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::ops::{self, LayerNormStats};
use crate::tensor::{Element, Tensor};
use crate::tvconv::{tvconv_apply, WeightField};

pub use check::{finite_diff_grad, grad_check, GradReport};

/// Identifies a trainable tensor across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a node on one [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T: Element> {
    Constant,
    Input,
    Param(ParamId),
    Depthwise,
    Conv2d,
    LayerNorm(LayerNormStats<T>),
    Relu,
    DownsampleMean,
    Subsample(usize),
    GlobalMeanPool,
    Linear,
    Matmul,
    Reshape,
    TvConv { kernel: usize },
    Add,
    Mul,
    Scale(f64),
    Sum,
    SoftmaxCrossEntropy { label: usize, probs: Vec<T> },
    ForwardOnly(String),
}

impl<T: Element> Op<T> {
    fn name(&self) -> &str {
        match self {
            Op::Constant => "constant",
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Depthwise => "depthwise_conv2d",
            Op::Conv2d => "conv2d",
            Op::LayerNorm(_) => "layer_norm",
            Op::Relu => "relu",
            Op::DownsampleMean => "downsample_mean",
            Op::Subsample(_) => "subsample",
            Op::GlobalMeanPool => "global_mean_pool",
            Op::Linear => "linear",
            Op::Matmul => "matmul",
            Op::Reshape => "reshape",
            Op::TvConv { .. } => "tvconv_apply",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::ForwardOnly(name) => name,
        }
    }
}

#[derive(Debug)]
struct Node<T: Element> {
    op: Op<T>,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Records forward computations for one backward sweep.
#[derive(Debug)]
pub struct Tape<T: Element = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<T: Element = f64> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a parameter; zeros if it was on the tape but unreachable.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient with respect to any node that requires grad.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<NodeId>, value: Tensor<T>) -> NodeId {
        let requires_grad = match op {
            Op::Input | Op::Param(_) => true,
            Op::Constant => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, ids: &[NodeId]) -> Result<()> {
        match ids.iter().find(|i| i.0 >= self.nodes.len()) {
            Some(bad) => Err(Error::Tape(format!("node {} is not on this tape", bad.0))),
            None => Ok(()),
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, vec![], value)
    }

    /// A value whose gradient is reported via [`Gradients::node`].
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, vec![], value)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> NodeId {
        self.push(Op::Param(id), vec![], value)
    }

    pub fn depthwise_conv2d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        self.check(&[x, w])?;
        let out = ops::depthwise_conv2d(self.value(x), self.value(w))?;
        Ok(self.push(Op::Depthwise, vec![x, w], out))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        self.check(&[x, w])?;
        let out = ops::conv2d(self.value(x), self.value(w))?;
        Ok(self.push(Op::Conv2d, vec![x, w], out))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        self.check(&[x, gamma, beta])?;
        let (out, stats) = ops::layer_norm_with_stats(self.value(x), self.value(gamma), self.value(beta), T::from_f64(eps))?;
        Ok(self.push(Op::LayerNorm(stats), vec![x, gamma, beta], out))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let out = ops::relu(self.value(x));
        Ok(self.push(Op::Relu, vec![x], out))
    }

    pub fn downsample_mean(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        self.check(&[x])?;
        let out = ops::downsample_mean(self.value(x), out_h, out_w)?;
        Ok(self.push(Op::DownsampleMean, vec![x], out))
    }

    pub fn subsample(&mut self, x: NodeId, stride: usize) -> Result<NodeId> {
        self.check(&[x])?;
        let out = ops::subsample(self.value(x), stride)?;
        Ok(self.push(Op::Subsample(stride), vec![x], out))
    }

    pub fn global_mean_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let out = ops::global_mean_pool(self.value(x))?;
        Ok(self.push(Op::GlobalMeanPool, vec![x], out))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[x, w, b])?;
        let out = ops::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Linear, vec![x, w, b], out))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Matmul, vec![a, b], out))
    }

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> Result<NodeId> {
        self.check(&[x])?;
        let out = self.value(x).clone().reshape(dims)?;
        Ok(self.push(Op::Reshape, vec![x], out))
    }

    /// Applies a `[c*k*k, h, w]` weight-field node to a `[c, h, w]` input.
    pub fn tvconv_apply(&mut self, x: NodeId, field: NodeId, kernel: usize) -> Result<NodeId> {
        self.check(&[x, field])?;
        let c = self.value(x).dims()[0];
        let wf = WeightField::new(self.value(field).clone(), c, kernel)?;
        let out = tvconv_apply(self.value(x), &wf)?;
        Ok(self.push(Op::TvConv { kernel }, vec![x, field], out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add, vec![a, b], out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul, vec![a, b], out))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        self.check(&[x])?;
        let out = self.value(x).scale(T::from_f64(s));
        Ok(self.push(Op::Scale(s), vec![x], out))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let out = Tensor::scalar(self.value(x).sum());
        Ok(self.push(Op::Sum, vec![x], out))
    }

    /// `-log softmax(logits)[label]` for a 1-D logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        self.check(&[logits])?;
        let z = self.value(logits);
        if z.ndim() != 1 || label >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for logits {:?}",
                z.dims()
            )));
        }
        let probs = kernels::softmax(z.data());
        let p = probs[label];
        let loss = if p.is_nan() { p } else { -p.max(T::min_positive_value()).ln() };
        Ok(self.push(Op::SoftmaxCrossEntropy { label, probs }, vec![logits], Tensor::scalar(loss)))
    }

    /// Records a value computed outside the tape. Backward fails if any
    /// gradient reaches it.
    pub fn forward_only(&mut self, name: &str, inputs: &[NodeId], value: Tensor<T>) -> Result<NodeId> {
        self.check(inputs)?;
        Ok(self.push(Op::ForwardOnly(name.to_string()), inputs.to_vec(), value))
    }

    /// Gradients of a scalar `loss` node (seeded with 1).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.check(&[loss])?;
        let dims = self.value(loss).dims();
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!("loss must be a scalar, got dims {dims:?}")));
        }
        self.backward_from(vec![(loss, Tensor::filled(dims, T::one())?)])
    }

    /// Backward sweep from arbitrary seeds `(node, d loss / d node)`.
    pub fn backward_from(&self, seeds: Vec<(NodeId, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, seed) in seeds {
            self.check(&[id])?;
            if seed.dims() != self.value(id).dims() {
                return Err(Error::shape("backward seed", "seed", seed.dims(), "node", self.value(id).dims()));
            }
            accumulate(&mut grads[id.0], seed);
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let contributions = self.rule(node, &gy)?;
            for (input, g) in contributions {
                accumulate(&mut grads[input.0], g);
            }
            grads[idx] = Some(gy);
        }
        let mut params = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let Op::Param(pid) = node.op {
                let g = g.clone().unwrap_or_else(|| {
                    Tensor::zeros(node.value.dims()).expect("node dims are valid")
                });
                match params.get_mut(&pid) {
                    None => {
                        params.insert(pid, g);
                    }
                    Some(acc) => {
                        let acc: &mut Tensor<T> = acc;
                        acc.axpy(T::one(), &g)?;
                    }
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient contributions from one node to its inputs.
    fn rule(&self, node: &Node<T>, gy: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let ins = &node.inputs;
        let val = |i: usize| &self.nodes[ins[i].0].value;
        let mut out = Vec::with_capacity(ins.len());
        let mut emit = |id: NodeId, g: Option<Tensor<T>>| {
            if let Some(g) = g {
                out.push((id, g));
            }
        };
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Depthwise => {
                let (gx, gw) = kernels::depthwise_backward(val(0), val(1), gy, self.needs(ins[0]), self.needs(ins[1]));
                emit(ins[0], gx);
                emit(ins[1], gw);
            }
            Op::Conv2d => {
                let (gx, gw) = kernels::conv2d_backward(val(0), val(1), gy, self.needs(ins[0]), self.needs(ins[1]));
                emit(ins[0], gx);
                emit(ins[1], gw);
            }
            Op::TvConv { kernel } => {
                let (gx, gw) =
                    kernels::tvconv_backward(val(0), val(1), *kernel, gy, self.needs(ins[0]), self.needs(ins[1]));
                emit(ins[0], gx);
                emit(ins[1], gw);
            }
            Op::LayerNorm(stats) => {
                let (gx, gg, gb) = kernels::layer_norm_backward(stats, val(1), gy);
                emit(ins[0], Some(gx));
                emit(ins[1], Some(gg));
                emit(ins[2], Some(gb));
            }
            Op::Relu => {
                let g = gy.zip_map(&node.value, |g, y| if y > T::zero() { g } else { T::zero() })?;
                emit(ins[0], Some(g));
            }
            Op::DownsampleMean => emit(ins[0], Some(kernels::downsample_mean_backward(val(0).dims(), gy))),
            Op::Subsample(s) => emit(ins[0], Some(kernels::subsample_backward(val(0).dims(), *s, gy))),
            Op::GlobalMeanPool => emit(ins[0], Some(kernels::global_mean_pool_backward(val(0).dims(), gy))),
            Op::Linear => {
                let (gx, gw, gb) = kernels::linear_backward(val(0), val(1), gy, self.needs(ins[0]));
                emit(ins[0], gx);
                emit(ins[1], Some(gw));
                emit(ins[2], Some(gb));
            }
            Op::Matmul => {
                let (ga, gb) = kernels::matmul_backward(val(0), val(1), gy, self.needs(ins[0]), self.needs(ins[1]));
                emit(ins[0], ga);
                emit(ins[1], gb);
            }
            Op::Reshape => emit(ins[0], Some(gy.clone().reshape(val(0).dims())?)),
            Op::Add => {
                emit(ins[0], Some(gy.clone()));
                emit(ins[1], Some(gy.clone()));
            }
            Op::Mul => {
                emit(ins[0], Some(gy.zip_map(val(1), |g, b| g * b)?));
                emit(ins[1], Some(gy.zip_map(val(0), |g, a| g * a)?));
            }
            Op::Scale(s) => emit(ins[0], Some(gy.scale(T::from_f64(*s)))),
            Op::Sum => {
                let g = gy.data()[0];
                emit(ins[0], Some(Tensor::filled(val(0).dims(), g)?));
            }
            Op::SoftmaxCrossEntropy { label, probs } => {
                let g = gy.data()[0];
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| g * (p - if i == *label { T::one() } else { T::zero() }))
                    .collect();
                emit(ins[0], Some(Tensor::new(val(0).dims().to_vec(), data)?));
            }
            Op::ForwardOnly(_) => return Err(Error::UnregisteredBackward(node.op.name().to_string())),
        }
        Ok(out.into_iter().filter(|(id, _)| self.needs(*id)).collect())
    }

    /// Smallest |pre-activation| over every ReLU on the tape, or infinity.
    pub(crate) fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu))
            .flat_map(|n| self.nodes[n.inputs[0].0].value.data().iter().map(|&v| Element::to_f64(v).abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Op names in tape order; used by diagnostics and tests.
    pub fn op_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_subgradient() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param(ParamId(0)).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn depthwise_patch_membership_counts() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled(&[1, 5, 5], 0.3).unwrap());
        let w = tape.constant(Tensor::filled(&[1, 3, 3], 1.0).unwrap());
        let y = tape.depthwise_conv2d(x, w).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        let gx = g.node(x).unwrap();
        assert_eq!(gx.get(&[0, 2, 2]).unwrap(), 9.0);
        assert_eq!(gx.get(&[0, 0, 0]).unwrap(), 4.0);
        assert_eq!(gx.get(&[0, 0, 2]).unwrap(), 6.0);
        assert!(g.node(w).is_none());
    }

    #[test]
    fn zero_scaled_loss_gives_zero_grads() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(3), Tensor::new(vec![1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let w = tape.param(ParamId(4), Tensor::filled(&[1, 3, 3], 0.7).unwrap());
        let y = tape.depthwise_conv2d(x, w).unwrap();
        let s = tape.sum(y).unwrap();
        let l = tape.scale(s, 0.0).unwrap();
        let g = tape.backward(l).unwrap();
        for t in g.params().values() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unreachable_params_get_zero_grads_of_same_shape() {
        let mut tape = Tape::new();
        let a = tape.param(ParamId(0), Tensor::filled(&[3], 1.0).unwrap());
        let _b = tape.param(ParamId(1), Tensor::filled(&[2, 2], 1.0).unwrap());
        let l = tape.sum(a).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.param(ParamId(1)).unwrap().dims(), &[2, 2]);
        assert_eq!(g.param(ParamId(1)).unwrap().sum(), 0.0);
    }

    #[test]
    fn non_scalar_loss_and_forward_only_are_errors() {
        let mut tape = Tape::new();
        let a = tape.param(ParamId(0), Tensor::filled(&[3], 1.0).unwrap());
        assert!(matches!(tape.backward(a), Err(Error::Tape(_))));
        let opaque = tape.forward_only("argmax", &[a], Tensor::scalar(0.0)).unwrap();
        let l = tape.sum(opaque).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::UnregisteredBackward(name)) if name == "argmax"));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        let a = tape.scale(x, 2.0).unwrap();
        let b = tape.mul(x, x).unwrap();
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        // d/dx (2x + x^2) = 2 + 2x
        assert_eq!(g.param(ParamId(0)).unwrap().data(), &[5.0, 1.0]);
    }
}
