//! Append-only computation tape and reverse-mode differentiation.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ChannelStats, ConvDims, ConvGeometry};
use super::{broadcast_index, broadcast_shape, split_at_axis, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Log,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    Binary { kind: BinaryKind, lhs: usize, rhs: usize },
    Unary { kind: UnaryKind, input: usize },
    Affine { input: usize, scale: f64 },
    Clamp { input: usize, lo: f64, hi: f64 },
    MatMul { lhs: usize, rhs: usize, m: usize, k: usize, n: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { input: usize, axis: usize, start: usize },
    Reshape { input: usize },
    Reduce { input: usize, kind: ReduceKind, axes: Vec<usize> },
    Conv {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        dims: ConvDims,
        geom: ConvGeometry,
        transposed: bool,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    AvgPool { input: usize, window: usize, stride: usize },
    Upsample { input: usize, factor: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records every operation applied to its [`Var`]s so that
/// [`Tape::backward`] can replay them in reverse.
///
/// Nodes are only ever appended, so each node's inputs precede it and a
/// single reverse sweep visits every node once.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Which side of the kink each recorded relu / leaky-relu input lies on.
    /// Two evaluations with different patterns straddle a non-differentiable
    /// point, so a finite difference between them is meaningless.
    /// Only tracked nodes are recorded.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut signs = Vec::new();
        for node in nodes.iter() {
            if let Op::Unary { kind: UnaryKind::Relu | UnaryKind::LeakyRelu(_), input } = node.op {
                signs.extend(nodes[input].value.data().iter().map(|&v| v > 0.0));
            }
        }
        signs
    }

    /// Clears every stored gradient.
    pub fn zero_grad(&self) {
        self.nodes.borrow_mut().iter_mut().for_each(|n| n.grad = None);
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let op = if requires_grad { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad, grad: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagates from a one-element `loss`.
    ///
    /// Gradients are added to whatever each node already holds, so repeated
    /// calls accumulate until [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Contract("loss does not depend on any tracked tensor".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, &nodes[id], &g, &mut grads)?;
            grads[id] = Some(g);
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => grads[id] = Some(g),
    }
}

/// Reduces a gradient of shape `out` onto an operand of shape `shape`.
fn unbroadcast(g: &[f64], shape: &[usize], out: &[usize], f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let idx = broadcast_index(shape, out);
    let mut acc = vec![0.0; shape.iter().product()];
    for (i, (&src, &gv)) in idx.iter().zip(g).enumerate() {
        acc[src] += f(i, gv);
    }
    acc
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let wants = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, lhs, rhs } => {
            let (a, b) = (val(*lhs), val(*rhs));
            let out = node.value.shape();
            let same = a.shape() == b.shape();
            if wants(*lhs) {
                let ga = match kind {
                    BinaryKind::Add | BinaryKind::Sub if same => g.to_vec(),
                    BinaryKind::Mul if same => g.iter().zip(b.data()).map(|(g, b)| g * b).collect(),
                    BinaryKind::Add | BinaryKind::Sub => unbroadcast(g, a.shape(), out, |_, g| g),
                    BinaryKind::Mul => {
                        let bi = broadcast_index(b.shape(), out);
                        unbroadcast(g, a.shape(), out, |i, g| g * b.data()[bi[i]])
                    }
                };
                accumulate(nodes, grads, *lhs, ga);
            }
            if wants(*rhs) {
                let gb = match kind {
                    BinaryKind::Add if same => g.to_vec(),
                    BinaryKind::Sub if same => g.iter().map(|g| -g).collect(),
                    BinaryKind::Mul if same => g.iter().zip(a.data()).map(|(g, a)| g * a).collect(),
                    BinaryKind::Add => unbroadcast(g, b.shape(), out, |_, g| g),
                    BinaryKind::Sub => unbroadcast(g, b.shape(), out, |_, g| -g),
                    BinaryKind::Mul => {
                        let ai = broadcast_index(a.shape(), out);
                        unbroadcast(g, b.shape(), out, |i, g| g * a.data()[ai[i]])
                    }
                };
                accumulate(nodes, grads, *rhs, gb);
            }
        }
        Op::Unary { kind, input } => {
            let x = val(*input).data();
            let y = node.value.data();
            let gx: Vec<f64> = match kind {
                UnaryKind::Neg => g.iter().map(|g| -g).collect(),
                UnaryKind::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                UnaryKind::Sigmoid => g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                UnaryKind::Relu => g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                UnaryKind::LeakyRelu(s) => {
                    g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { s * g }).collect()
                }
                UnaryKind::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
            };
            accumulate(nodes, grads, *input, gx);
        }
        Op::Affine { input, scale } => {
            accumulate(nodes, grads, *input, g.iter().map(|g| g * scale).collect());
        }
        Op::Clamp { input, lo, hi } => {
            let x = val(*input).data();
            let gx = g
                .iter()
                .zip(x)
                .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *input, gx);
        }
        Op::MatMul { lhs, rhs, m, k, n } => {
            if wants(*lhs) {
                let mut ga = vec![0.0; m * k];
                kernels::gemm(*m, *n, *k, g, false, val(*rhs).data(), true, &mut ga, 0.0);
                accumulate(nodes, grads, *lhs, ga);
            }
            if wants(*rhs) {
                let mut gb = vec![0.0; k * n];
                kernels::gemm(*k, *m, *n, val(*lhs).data(), true, g, false, &mut gb, 0.0);
                accumulate(nodes, grads, *rhs, gb);
            }
        }
        Op::Concat { inputs, axis } => {
            let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
            let mut offset = 0;
            for &id in inputs {
                let len = val(id).shape()[*axis];
                if wants(id) {
                    accumulate(nodes, grads, id, gt.narrow(*axis, offset, len)?.into_data());
                }
                offset += len;
            }
        }
        Op::Narrow { input, axis, start } => {
            let full = val(*input).shape();
            let (outer, inner) = split_at_axis(full, *axis);
            let (dim, len) = (full[*axis], node.value.shape()[*axis]);
            let mut gx = vec![0.0; full.iter().product()];
            for o in 0..outer {
                let dst = (o * dim + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            accumulate(nodes, grads, *input, gx);
        }
        Op::Reshape { input } => accumulate(nodes, grads, *input, g.to_vec()),
        Op::Reduce { input, kind, axes } => {
            let shape = val(*input).shape();
            let kept = keepdim_shape(shape, axes);
            let idx = broadcast_index(&kept, shape);
            let scale = match kind {
                ReduceKind::Sum => 1.0,
                ReduceKind::Mean => 1.0 / reduced_count(shape, axes) as f64,
            };
            accumulate(nodes, grads, *input, idx.iter().map(|&o| g[o] * scale).collect());
        }
        Op::Conv { input, weight, bias, dims, geom, transposed } => {
            let want = [wants(*input), wants(*weight), bias.is_some_and(wants)];
            let (x, w) = (val(*input).data(), val(*weight).data());
            let out = if *transposed {
                kernels::deconv2d_backward(x, w, g, *dims, *geom, want)?
            } else {
                kernels::conv2d_backward(x, w, g, *dims, *geom, want)?
            };
            if let Some(gx) = out.input {
                accumulate(nodes, grads, *input, gx);
            }
            if let Some(gw) = out.weight {
                accumulate(nodes, grads, *weight, gw);
            }
            if let (Some(b), Some(gb)) = (bias, out.bias) {
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
            let (batch, channels, spatial) = bn_layout(val(*input).shape())?;
            let (gx, gg, gb) = kernels::batchnorm_backward(
                g,
                xhat,
                inv_std,
                val(*gamma).data(),
                batch,
                channels,
                spatial,
                *batch_stats,
            );
            accumulate(nodes, grads, *input, gx);
            accumulate(nodes, grads, *gamma, gg);
            accumulate(nodes, grads, *beta, gb);
        }
        Op::AvgPool { input, window, stride } => {
            let (planes, h, w) = planes_of(val(*input).shape())?;
            accumulate(nodes, grads, *input, kernels::avg_pool_backward(g, planes, h, w, *window, *stride));
        }
        Op::Upsample { input, factor } => {
            let (planes, h, w) = planes_of(val(*input).shape())?;
            accumulate(nodes, grads, *input, kernels::upsample_backward(g, planes, h, w, *factor));
        }
    }
    Ok(())
}

fn keepdim_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape.iter().enumerate().map(|(i, &d)| if axes.contains(&i) { 1 } else { d }).collect()
}

fn reduced_count(shape: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| shape[a]).product()
}

/// `(N·C, H, W)` for a 4-D image batch.
fn planes_of(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, c, h, w] => Ok((n * c, *h, *w)),
        _ => shape_err(format!("expected an [N, C, H, W] tensor, got {shape:?}")),
    }
}

/// `(batch, channels, spatial)` for `[N, C]` or `[N, C, ...]` inputs.
fn bn_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return shape_err(format!("batchnorm needs at least [N, C], got {shape:?}"));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

fn same_tape<'t>(vars: &[Var<'t>]) -> Result<&'t Tape> {
    let tape = vars.first().ok_or_else(|| Error::Contract("no operands".into()))?.tape;
    if vars.iter().any(|v| !std::ptr::eq(v.tape, tape)) {
        return Err(Error::Contract("operands belong to different tapes".into()));
    }
    Ok(tape)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Gradient accumulated by [`Tape::backward`], if any reached this node.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value shape"))
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value().as_ref().clone())
    }

    fn binary(self, other: Var<'t>, kind: BinaryKind) -> Result<Var<'t>> {
        let tape = same_tape(&[self, other])?;
        let (a, b) = (self.value(), other.value());
        let out_shape = broadcast_shape(a.shape(), b.shape())?;
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let data: Vec<f64> = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ai = broadcast_index(a.shape(), &out_shape);
            let bi = broadcast_index(b.shape(), &out_shape);
            ai.iter().zip(&bi).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect()
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(tape.push(Tensor::new(out_shape, data)?, Op::Binary { kind, lhs: self.id, rhs: other.id }, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinaryKind::Mul)
    }

    /// Applies an elementwise nonlinearity. Only `Log` can fail, on any
    /// non-positive input.
    pub fn unary(self, kind: UnaryKind) -> Result<Var<'t>> {
        let x = self.value();
        if kind == UnaryKind::Log {
            if let Some((i, v)) = x.data().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::Domain(format!("log of non-positive value {v} at index {i}")));
            }
        }
        let out = x.map(|v| match kind {
            UnaryKind::Neg => -v,
            UnaryKind::Log => v.ln(),
            UnaryKind::Sigmoid => sigmoid(v),
            UnaryKind::Relu => v.max(0.0),
            UnaryKind::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            UnaryKind::Tanh => v.tanh(),
        });
        Ok(self.tape.push(out, Op::Unary { kind, input: self.id }, self.requires_grad()))
    }

    fn infallible(self, kind: UnaryKind) -> Var<'t> {
        self.unary(kind).expect("only log can fail")
    }

    pub fn neg(self) -> Var<'t> {
        self.infallible(UnaryKind::Neg)
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Log)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.infallible(UnaryKind::Sigmoid)
    }

    pub fn relu(self) -> Var<'t> {
        self.infallible(UnaryKind::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.infallible(UnaryKind::LeakyRelu(slope))
    }

    pub fn tanh(self) -> Var<'t> {
        self.infallible(UnaryKind::Tanh)
    }

    /// `scale·x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        let out = self.value().map(|v| scale * v + shift);
        self.tape.push(out, Op::Affine { input: self.id, scale }, self.requires_grad())
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.affine(factor, 0.0)
    }

    /// `1 − x`.
    pub fn one_minus(self) -> Var<'t> {
        self.affine(-1.0, 1.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping applied.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let out = self.value().map(|v| v.clamp(lo, hi));
        self.tape.push(out, Op::Clamp { input: self.id, lo, hi }, self.requires_grad())
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let tape = same_tape(&[self, other])?;
        let (a, b) = (self.value(), other.value());
        let (m, k, n) = match (a.shape(), b.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => return shape_err(format!("matmul of {sa:?} by {sb:?}")),
        };
        let mut data = vec![0.0; m * n];
        kernels::gemm(m, k, n, a.data(), false, b.data(), false, &mut data, 0.0);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(tape.push(Tensor::new([m, n], data)?, Op::MatMul { lhs: self.id, rhs: other.id, m, k, n }, rg))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let tape = same_tape(parts)?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat(&refs, axis)?;
        let rg = parts.iter().any(|v| v.requires_grad());
        let inputs = parts.iter().map(|v| v.id).collect();
        Ok(tape.push(out, Op::Concat { inputs, axis }, rg))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let out = self.value().narrow(axis, start, len)?;
        Ok(self.tape.push(out, Op::Narrow { input: self.id, axis, start }, self.requires_grad()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().as_ref().clone().reshape(shape)?;
        Ok(self.tape.push(out, Op::Reshape { input: self.id }, self.requires_grad()))
    }

    /// Collapses everything after the leading axis.
    pub fn flatten(self) -> Result<Var<'t>> {
        let shape = self.shape();
        let n = *shape.first().ok_or_else(|| Error::Shape("cannot flatten a scalar".into()))?;
        self.reshape(&[n, shape[1..].iter().product()])
    }

    /// Sums or averages over `axes`, removing them. An empty list reduces
    /// every axis to a scalar.
    pub fn reduce(self, kind: ReduceKind, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape();
        let mut axes: Vec<usize> = if axes.is_empty() { (0..shape.len()).collect() } else { axes.to_vec() };
        axes.sort_unstable();
        axes.dedup();
        if let Some(bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return shape_err(format!("axis {bad} out of range for {shape:?}"));
        }
        let kept = keepdim_shape(shape, &axes);
        let idx = broadcast_index(&kept, shape);
        let mut data = vec![0.0; kept.iter().product()];
        for (&o, &v) in idx.iter().zip(x.data()) {
            data[o] += v;
        }
        if kind == ReduceKind::Mean {
            let count = reduced_count(shape, &axes) as f64;
            data.iter_mut().for_each(|v| *v /= count);
        }
        let out_shape: Vec<usize> =
            shape.iter().enumerate().filter(|(i, _)| !axes.contains(i)).map(|(_, &d)| d).collect();
        let out = Tensor::new(out_shape, data)?;
        Ok(self.tape.push(out, Op::Reduce { input: self.id, kind, axes }, self.requires_grad()))
    }

    pub fn sum(self) -> Var<'t> {
        self.reduce(ReduceKind::Sum, &[]).expect("full reduction is always valid")
    }

    pub fn mean(self) -> Var<'t> {
        self.reduce(ReduceKind::Mean, &[]).expect("full reduction is always valid")
    }

    fn conv_like(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        geom: ConvGeometry,
        transposed: bool,
    ) -> Result<Var<'t>> {
        let mut operands = vec![self, weight];
        operands.extend(bias);
        let tape = same_tape(&operands)?;
        let (x, w) = (self.value(), weight.value());
        let (batch, c_in, h, wd) = match x.shape() {
            [n, c, h, w] => (*n, *c, *h, *w),
            s => return shape_err(format!("convolution input must be [N, C, H, W], got {s:?}")),
        };
        let (c_out, k) = match (w.shape(), transposed) {
            ([co, ci, k1, k2], false) if *ci == c_in && k1 == k2 => (*co, *k1),
            ([ci, co, k1, k2], true) if *ci == c_in && k1 == k2 => (*co, *k1),
            (s, _) => {
                return shape_err(format!("weight {s:?} does not fit {c_in} input channels"));
            }
        };
        if k != geom.kernel {
            return shape_err(format!("weight kernel {k} differs from geometry kernel {}", geom.kernel));
        }
        let bias_value = bias.map(|b| b.value());
        if let Some(b) = &bias_value {
            if b.shape() != [c_out] {
                return shape_err(format!("bias {:?} does not match {c_out} output channels", b.shape()));
            }
        }
        let dims = ConvDims { batch, c_in, c_out, h, w: wd };
        let b = bias_value.as_ref().map(|b| b.data());
        let (data, oh, ow) = if transposed {
            kernels::deconv2d_forward(x.data(), w.data(), b, dims, geom)?
        } else {
            kernels::conv2d_forward(x.data(), w.data(), b, dims, geom)?
        };
        let out = Tensor::new([batch, c_out, oh, ow], data)?;
        let rg = operands.iter().any(|v| v.requires_grad());
        let op = Op::Conv { input: self.id, weight: weight.id, bias: bias.map(|b| b.id), dims, geom, transposed };
        Ok(tape.push(out, op, rg))
    }

    /// Cross-correlation with weight `[c_out, c_in, k, k]` and optional bias `[c_out]`.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, geom: ConvGeometry) -> Result<Var<'t>> {
        self.conv_like(weight, bias, geom, false)
    }

    /// Transposed convolution with weight `[c_in, c_out, k, k]`.
    pub fn deconv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, geom: ConvGeometry) -> Result<Var<'t>> {
        self.conv_like(weight, bias, geom, true)
    }

    /// Normalizes each channel with batch statistics, then applies
    /// `gamma`/`beta`. Returns the batch mean and biased variance for the
    /// caller's running buffers.
    pub fn batchnorm_train(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        eps: f64,
    ) -> Result<(Var<'t>, Vec<f64>, Vec<f64>)> {
        let x = self.value();
        let (batch, channels, spatial) = bn_layout(x.shape())?;
        if batch * spatial < 2 {
            return Err(Error::Contract(format!(
                "batch statistics need at least 2 values per channel, got {}",
                batch * spatial
            )));
        }
        let ChannelStats { mean, var } = kernels::channel_stats(x.data(), batch, channels, spatial);
        let out = self.normalize(gamma, beta, &mean, &var, eps, true)?;
        Ok((out, mean, var))
    }

    /// Normalizes with fixed statistics (running buffers).
    pub fn batchnorm_eval(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var<'t>> {
        self.normalize(gamma, beta, mean, var, eps, false)
    }

    fn normalize(
        self,
        gamma: Var<'t>,
        beta: Var<'t>,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        batch_stats: bool,
    ) -> Result<Var<'t>> {
        let tape = same_tape(&[self, gamma, beta])?;
        let x = self.value();
        let (batch, channels, spatial) = bn_layout(x.shape())?;
        let (g, b) = (gamma.value(), beta.value());
        if g.len() != channels || b.len() != channels || mean.len() != channels || var.len() != channels {
            return shape_err(format!("batchnorm parameters do not match {channels} channels"));
        }
        if !(eps > 0.0) {
            return Err(Error::Contract("batchnorm epsilon must be positive".into()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) =
            kernels::batchnorm_apply(x.data(), mean, &inv_std, g.data(), b.data(), batch, channels, spatial);
        let out = Tensor::new(x.shape().to_vec(), y)?;
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op = Op::BatchNorm { input: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, batch_stats };
        Ok(tape.push(out, op, rg))
    }

    /// Average pooling; `(H − window)` and `(W − window)` must be multiples of `stride`.
    pub fn avg_pool(self, window: usize, stride: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (planes, h, w) = planes_of(x.shape())?;
        if window == 0 || stride == 0 {
            return shape_err("pool window and stride must be at least 1");
        }
        if window > h || window > w || (h - window) % stride != 0 || (w - window) % stride != 0 {
            return shape_err(format!("{h}×{w} is not tiled exactly by window {window}, stride {stride}"));
        }
        let (data, oh, ow) = kernels::avg_pool_forward(x.data(), planes, h, w, window, stride);
        let s = x.shape();
        let out = Tensor::new([s[0], s[1], oh, ow], data)?;
        Ok(self.tape.push(out, Op::AvgPool { input: self.id, window, stride }, self.requires_grad()))
    }

    /// Replicates each pixel into a `factor × factor` block.
    pub fn upsample_nearest(self, factor: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (planes, h, w) = planes_of(x.shape())?;
        if factor == 0 {
            return shape_err("upsample factor must be at least 1");
        }
        let data = kernels::upsample_forward(x.data(), planes, h, w, factor);
        let s = x.shape();
        let out = Tensor::new([s[0], s[1], h * factor, w * factor], data)?;
        Ok(self.tape.push(out, Op::Upsample { input: self.id, factor }, self.requires_grad()))
    }
}

/// Logistic function, evaluated without overflow for large |v|.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
