//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its output value.
//! Nodes are appended in evaluation order, so walking them backwards is a
//! valid topological order for [`Graph::backward`].
//!
//! ```
//! use dnerv_core::autograd::Graph;
//! use dnerv_core::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let w = g.param(Tensor::new([2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(w, w).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
//! ```

use crate::error::{dim_err, usage_err, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Exact form `x·Φ(x)`.
    Gelu,
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Act(Activation),
    Square,
    Abs,
    Scale(f64),
    AddScalar(f64),
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<f64>>,
    },
    PixelShuffle {
        input: Var,
        factor: usize,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation plus gradient buffers for its `requires_grad` leaves.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

/// Derivative of GELU at `x`, given the forward output `y = x·Φ(x)`.
fn gelu_grad(x: f64, y: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = if x == 0.0 { 0.5 } else { y / x };
    cdf + x * pdf
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if [`Graph::backward`] has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        if cfg!(debug_assertions) {
            value.ensure_finite(name)?;
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn chw(&self, v: Var) -> Result<[usize; 3]> {
        let (c, h, w) = self.value(v).chw()?;
        Ok([c, h, w])
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(
            self.chw(input)?,
            self.value(weight).shape(),
            stride,
            padding,
            groups,
        )?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.c_out] {
                return Err(dim_err!(
                    "conv2d: bias shape {:?}, expected [{}]",
                    self.value(b).shape(),
                    geom.c_out
                ));
            }
        }
        let (out, cols) = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new([geom.c_out, geom.h_out, geom.w_out], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let needs_cols = self.nodes[weight.0].requires_grad;
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols: cols.filter(|_| needs_cols),
            },
            &inputs,
            "conv2d",
        )
    }

    pub fn pixel_shuffle(&mut self, input: Var, factor: usize) -> Result<Var> {
        let (out, shape) = kernels::pixel_shuffle(self.value(input).data(), self.chw(input)?, factor)?;
        let value = Tensor::new(shape, out)?;
        self.push(value, Op::PixelShuffle { input, factor }, &[input], "pixel_shuffle")
    }

    /// Normalizes the channel vector at every spatial location, then applies
    /// a per-channel affine map.
    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(usage_err!("layer_norm: eps must be positive, got {eps}"));
        }
        let [c, h, w] = self.chw(input)?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.value(p).shape() != [c] {
                return Err(dim_err!(
                    "layer_norm: {name} shape {:?}, expected [{c}]",
                    self.value(p).shape()
                ));
            }
        }
        let x = self.value(input).data();
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let plane = h * w;
        let mut xhat = vec![0.0; c * plane];
        let mut rstd = vec![0.0; plane];
        let mut out = vec![0.0; c * plane];
        for p in 0..plane {
            let mean = (0..c).map(|ch| x[ch * plane + p]).sum::<f64>() / c as f64;
            let var = (0..c)
                .map(|ch| (x[ch * plane + p] - mean).powi(2))
                .sum::<f64>()
                / c as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[p] = r;
            for ch in 0..c {
                let xh = (x[ch * plane + p] - mean) * r;
                xhat[ch * plane + p] = xh;
                out[ch * plane + p] = gm[ch] * xh + bt[ch];
            }
        }
        let value = Tensor::new([c, h, w], out)?;
        self.push(
            value,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[input, gamma, beta],
            "layer_norm",
        )
    }

    fn unary(&mut self, input: Var, op: Unary) -> Result<Var> {
        let f: Box<dyn Fn(f64) -> f64> = match op {
            Unary::Act(a) => Box::new(move |x| a.apply(x)),
            Unary::Square => Box::new(|x| x * x),
            Unary::Abs => Box::new(f64::abs),
            Unary::Scale(c) => Box::new(move |x| c * x),
            Unary::AddScalar(c) => Box::new(move |x| x + c),
        };
        let value = self.value(input).map(f);
        self.push(value, Op::Unary(input, op), &[input], "unary")
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Result<Var> {
        self.unary(input, Unary::Act(kind))
    }

    pub fn gelu(&mut self, input: Var) -> Result<Var> {
        self.activation(Activation::Gelu, input)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.activation(Activation::Tanh, input)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, input)
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        self.unary(input, Unary::Square)
    }

    /// `|x|`, with subgradient 0 at 0.
    pub fn abs(&mut self, input: Var) -> Result<Var> {
        self.unary(input, Unary::Abs)
    }

    pub fn scale(&mut self, input: Var, c: f64) -> Result<Var> {
        self.unary(input, Unary::Scale(c))
    }

    pub fn add_scalar(&mut self, input: Var, c: f64) -> Result<Var> {
        self.unary(input, Unary::AddScalar(c))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, input: Var) -> Result<Var> {
        let neg = self.scale(input, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match op {
            Binary::Add => ta.zip_map(tb, |x, y| x + y),
            Binary::Sub => ta.zip_map(tb, |x, y| x - y),
            Binary::Mul => ta.zip_map(tb, |x, y| x * y),
            Binary::Div => ta.zip_map(tb, |x, y| x / y),
        }?;
        self.push(value, Op::Binary(a, b, op), &[a, b], "binary")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, Op::Sum(input), &[input], "sum")
            .expect("sum of finite values")
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).mean());
        self.push(value, Op::Mean(input), &[input], "mean")
            .expect("mean of finite values")
    }

    /// Stacks `[C_i, H, W]` values along channels.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_channels(&parts)?;
        self.push(value, Op::Concat(inputs.to_vec()), inputs, "concat")
    }

    /// Propagates d(loss)/d(node) to every `requires_grad` leaf.
    ///
    /// Leaf gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(usage_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(&dy)
                        .for_each(|(a, d)| *a += d),
                    slot @ None => {
                        *slot = Some(Tensor::new(node.value.shape().to_vec(), dy)?);
                    }
                }
                continue;
            }
            self.propagate(idx, &dy, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        // Returns the gradient buffer for `v`, allocating zeros on first touch.
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }
        let node = &nodes[idx];
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let x = nodes[input.0].value.data();
                let w = nodes[weight.0].value.data();
                // Take buffers out to satisfy the borrow checker when inputs alias.
                let mut dx = wants(*input).then(|| std::mem::take(slot(grads, nodes, *input)));
                let mut dw = wants(*weight).then(|| std::mem::take(slot(grads, nodes, *weight)));
                let mut db = bias
                    .filter(|b| wants(*b))
                    .map(|b| std::mem::take(slot(grads, nodes, b)));
                kernels::conv2d_backward(
                    geom,
                    x,
                    w,
                    cols.as_deref(),
                    dy,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    grads[input.0] = Some(d);
                }
                if let Some(d) = dw {
                    grads[weight.0] = Some(d);
                }
                if let (Some(b), Some(d)) = (bias, db) {
                    grads[b.0] = Some(d);
                }
            }
            Op::PixelShuffle { input, factor } => {
                let shape = node.value.chw().expect("rank-3 output");
                let (back, _) = kernels::pixel_unshuffle(dy, [shape.0, shape.1, shape.2], *factor)
                    .expect("shape validated in forward");
                add_into(slot(grads, nodes, *input), &back);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (c, h, w) = node.value.chw().expect("rank-3 output");
                let plane = h * w;
                let gm = nodes[gamma.0].value.data();
                if wants(*gamma) {
                    let dg = slot(grads, nodes, *gamma);
                    for ch in 0..c {
                        dg[ch] += (0..plane)
                            .map(|p| dy[ch * plane + p] * xhat[ch * plane + p])
                            .sum::<f64>();
                    }
                }
                if wants(*beta) {
                    let dbt = slot(grads, nodes, *beta);
                    for ch in 0..c {
                        dbt[ch] += dy[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                    }
                }
                if wants(*input) {
                    let dx = slot(grads, nodes, *input);
                    let n = c as f64;
                    for p in 0..plane {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for ch in 0..c {
                            let d = dy[ch * plane + p] * gm[ch];
                            sum_d += d;
                            sum_dx += d * xhat[ch * plane + p];
                        }
                        for ch in 0..c {
                            let d = dy[ch * plane + p] * gm[ch];
                            dx[ch * plane + p] +=
                                rstd[p] / n * (n * d - sum_d - xhat[ch * plane + p] * sum_dx);
                        }
                    }
                }
            }
            Op::Unary(input, op) => {
                let x = nodes[input.0].value.data();
                let y = node.value.data();
                let dx = slot(grads, nodes, *input);
                for i in 0..dx.len() {
                    let local = match op {
                        Unary::Act(Activation::Gelu) => gelu_grad(x[i], y[i]),
                        Unary::Act(Activation::Tanh) => 1.0 - y[i] * y[i],
                        Unary::Act(Activation::Sigmoid) => y[i] * (1.0 - y[i]),
                        Unary::Square => 2.0 * x[i],
                        Unary::Abs => {
                            if x[i] > 0.0 {
                                1.0
                            } else if x[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Scale(c) => *c,
                        Unary::AddScalar(_) => 1.0,
                    };
                    dx[i] += dy[i] * local;
                }
            }
            Op::Binary(a, b, op) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if wants(*a) {
                    let da = slot(grads, nodes, *a);
                    for i in 0..da.len() {
                        da[i] += dy[i]
                            * match op {
                                Binary::Add | Binary::Sub => 1.0,
                                Binary::Mul => vb[i],
                                Binary::Div => 1.0 / vb[i],
                            };
                    }
                }
                if wants(*b) {
                    let db = slot(grads, nodes, *b);
                    for i in 0..db.len() {
                        db[i] += dy[i]
                            * match op {
                                Binary::Add => 1.0,
                                Binary::Sub => -1.0,
                                Binary::Mul => va[i],
                                Binary::Div => -va[i] / (vb[i] * vb[i]),
                            };
                    }
                }
            }
            Op::Sum(input) => {
                slot(grads, nodes, *input).iter_mut().for_each(|g| *g += dy[0]);
            }
            Op::Mean(input) => {
                let n = nodes[input.0].value.len() as f64;
                slot(grads, nodes, *input)
                    .iter_mut()
                    .for_each(|g| *g += dy[0] / n);
            }
            Op::Concat(inputs) => {
                let mut offset = 0;
                for v in inputs {
                    let n = nodes[v.0].value.len();
                    if wants(*v) {
                        add_into(slot(grads, nodes, *v), &dy[offset..offset + n]);
                    }
                    offset += n;
                }
            }
        }
    }
}

fn add_into(acc: &mut [f64], src: &[f64]) {
    acc.iter_mut().zip(src).for_each(|(a, s)| *a += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, 4.0]);
        // A second call accumulates.
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[4.0, 8.0]);
        g.zero_grad();
        assert!(g.grad(w).is_none());
    }

    #[test]
    fn disconnected_param_has_no_gradient_contribution() {
        let mut g = Graph::new();
        let used = g.param(t(&[1], &[3.0]));
        let unused = g.param(t(&[1], &[5.0]));
        let loss = g.square(used).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(used).unwrap().data(), &[6.0]);
        let zero = g.grad(unused).map_or(0.0, |t| t.item());
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut g = Graph::new();
        let w = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(gelu(0.0), 0.0);
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[0.0]));
        let y = g.sigmoid(x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn identity_and_sum_kernels() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([1, 3, 3], |i| i as f64));
        let w = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = g.conv2d(x, w, None, 1, 0, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let ones = g.constant(Tensor::full([1, 2, 2], 1.0));
        let k = g.constant(Tensor::full([1, 1, 2, 2], 1.0));
        let s = g.conv2d(ones, k, None, 1, 0, 1).unwrap();
        assert_eq!(g.value(s).shape(), &[1, 1, 1]);
        assert_eq!(g.value(s).item(), 4.0);
    }

    #[test]
    fn layer_norm_basic_cases() {
        let mut g = Graph::new();
        let gamma = g.constant(Tensor::full([2], 1.0));
        let beta = g.constant(Tensor::zeros([2]));
        let c = g.constant(Tensor::full([2, 2, 2], 3.0));
        let y = g.layer_norm(c, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let x = g.constant(t(&[2, 1, 1], &[1.0, -1.0]));
        let y = g.layer_norm(x, gamma, beta, 1e-12).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(x)).unwrap() < 1e-10);
    }

    #[test]
    fn nan_is_reported_in_debug() {
        if !cfg!(debug_assertions) {
            return;
        }
        let mut g = Graph::new();
        let a = g.constant(t(&[1], &[0.0]));
        let r = g.div(a, a);
        assert!(matches!(r, Err(crate::Error::NonFinite(_))));
    }
}
