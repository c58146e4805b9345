//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every operation appends a node holding its output tensor; node inputs
//! always precede the node, so the tape order is a topological order and the
//! backward pass is a single reverse sweep. A graph lives on one logical
//! thread for the duration of a forward/backward pair; independent graphs can
//! run concurrently.
//!
//! Binary elementwise ops broadcast with trailing-axis alignment and size-1
//! expansion. Every op validates its output for NaN/infinity and fails fast.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{broadcast_shapes, broadcast_to, reduce_to_shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Matmul,
    Transpose,
    Add,
    Sub,
    Mul,
    Div,
    /// y = a * x + b with scalar constants; only `a` matters in backward.
    Affine { a: f64 },
    Sigmoid,
    Tanh,
    Relu,
    Ln,
    Sqrt,
    Clamp { lo: f64, hi: f64 },
    SoftmaxLastAxis,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    Flip { axis: usize },
    SumAxis { axis: usize, keepdim: bool },
    MeanAxis { axis: usize, keepdim: bool },
    SumAll,
    MeanAll,
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    registered: HashMap<ParamId, NodeId>,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass w.r.t. this node, if any.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> Result<NodeId> {
        value.ensure_finite(op_name(&op))?;
        let needs_grad = inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
            grad: None,
            param: None,
        });
        Ok(id)
    }

    /// Leaf with no gradient tracking (inputs, labels, masks, tables).
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        value.ensure_finite("constant")?;
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            needs_grad: false,
            grad: None,
            param: None,
        });
        Ok(id)
    }

    pub fn input(&mut self, value: &Tensor) -> Result<NodeId> {
        self.constant(value.clone())
    }

    /// Registers a stored parameter as a leaf; repeated registration of the
    /// same id returns the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        if let Some(&node) = self.registered.get(&id) {
            return Ok(node);
        }
        let tensor = store.get(id).clone();
        tensor.ensure_finite("param")?;
        let needs_grad = tensor.requires_grad;
        let node = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value: tensor,
            needs_grad,
            grad: None,
            param: Some(id),
        });
        self.registered.insert(id, node);
        Ok(node)
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(
            self.nodes[a.0].value.values(),
            self.nodes[b.0].value.values(),
            n,
            k,
            m,
        );
        self.push(Op::Matmul, vec![a, b], Tensor::new(vec![n, m], data)?)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape_of(a);
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                shape: s,
                reason: "rank-2 tensor required".into(),
            });
        }
        let data = kernels::transpose(self.nodes[a.0].value.values(), s[0], s[1]);
        self.push(Op::Transpose, vec![a], Tensor::new(vec![s[1], s[0]], data)?)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Div, a, b, |x, y| x / y)
    }

    fn binary(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        let av = self.nodes[a.0].value.values();
        let bv = self.nodes[b.0].value.values();
        let (out_shape, data) = if sa == sb {
            let data = av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect();
            (sa, data)
        } else {
            let out_shape = broadcast_shapes(op_name(&op), &sa, &sb)?;
            let ae = broadcast_to(av, &sa, &out_shape);
            let be = broadcast_to(bv, &sb, &out_shape);
            let data = ae.iter().zip(&be).map(|(&x, &y)| f(x, y)).collect();
            (out_shape, data)
        };
        self.push(op, vec![a, b], Tensor::new(out_shape, data)?)
    }

    /// y = a*x + b elementwise with scalar constants.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> Result<NodeId> {
        self.unary(Op::Affine { a }, x, |v| a * v + b)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.affine(x, c, 0.0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sigmoid, x, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Tanh, x, f64::tanh)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu, x, |v| v.max(0.0))
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Ln, x, f64::ln)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sqrt, x, f64::sqrt)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.unary(Op::Clamp { lo, hi }, x, |v| v.clamp(lo, hi))
    }

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let data: Vec<f64> = self.nodes[x.0].value.values().iter().map(|&v| f(v)).collect();
        let shape = self.shape_of(x);
        self.push(op, vec![x], Tensor::new(shape, data)?)
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_last_axis(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape_of(x);
        let cols = *shape.last().expect("non-empty shape");
        let v = self.nodes[x.0].value.values();
        let mut data = vec![0.0; v.len()];
        for (row_in, row_out) in v.chunks(cols).zip(data.chunks_mut(cols)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        self.push(Op::SoftmaxLastAxis, vec![x], Tensor::new(shape, data)?)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat: empty input list".into()));
        }
        let first = self.shape_of(parts[0]);
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape_of(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s,
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = outer_inner(&out_shape, axis);
        let numel: usize = out_shape.iter().product();
        let mut data = vec![0.0; numel];
        let row_len = axis_total * inner;
        for o in 0..outer {
            let mut offset = 0;
            for &p in parts {
                let s = self.shape_of(p);
                let chunk = s[axis] * inner;
                let src = &self.nodes[p.0].value.values()[o * chunk..(o + 1) * chunk];
                data[o * row_len + offset..o * row_len + offset + chunk].copy_from_slice(src);
                offset += chunk;
            }
        }
        self.push(Op::Concat { axis }, parts.to_vec(), Tensor::new(out_shape, data)?)
    }

    /// Contiguous slice of `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape_of(x);
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape,
                reason: format!("axis {axis}, start {start}, len {len}"),
            });
        }
        let (outer, axis_len, inner) = outer_inner(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        let v = self.nodes[x.0].value.values();
        for o in 0..outer {
            let src = o * axis_len * inner + start * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&v[src..src + len * inner]);
        }
        self.push(Op::Slice { axis, start }, vec![x], Tensor::new(out_shape, data)?)
    }

    /// Row `i` of a rank-2 tensor as a [1 × cols] tensor.
    pub fn row(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        self.slice(x, 0, i, 1)
    }

    /// Reverses entry order along `axis`.
    pub fn flip(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape_of(x);
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: "flip",
                shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        let data = flip_data(self.nodes[x.0].value.values(), &shape, axis);
        self.push(Op::Flip { axis }, vec![x], Tensor::new(shape, data)?)
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize, keepdim: bool) -> Result<NodeId> {
        self.reduce_axis(Op::SumAxis { axis, keepdim }, x, axis, keepdim, false)
    }

    pub fn mean_axis(&mut self, x: NodeId, axis: usize, keepdim: bool) -> Result<NodeId> {
        self.reduce_axis(Op::MeanAxis { axis, keepdim }, x, axis, keepdim, true)
    }

    fn reduce_axis(
        &mut self,
        op: Op,
        x: NodeId,
        axis: usize,
        keepdim: bool,
        mean: bool,
    ) -> Result<NodeId> {
        let shape = self.shape_of(x);
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: op_name(&op),
                shape,
                reason: format!("axis {axis} out of range"),
            });
        }
        let (outer, len, inner) = outer_inner(&shape, axis);
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
        }
        let v = self.nodes[x.0].value.values();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = o * len * inner + l * inner;
                for i in 0..inner {
                    data[o * inner + i] += v[base + i];
                }
            }
        }
        if mean {
            let denom = len as f64;
            data.iter_mut().for_each(|d| *d /= denom);
        }
        self.push(op, vec![x], Tensor::new(out_shape, data)?)
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x.0].value.values().iter().sum();
        self.push(Op::SumAll, vec![x], Tensor::new(vec![1], vec![s])?)
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.nodes[x.0].value.values();
        let s: f64 = v.iter().sum();
        let m = s / v.len() as f64;
        self.push(Op::MeanAll, vec![x], Tensor::new(vec![1], vec![m])?)
    }

    fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.nodes[id.0].value.shape().to_vec()
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss; accumulates into node gradients.
    /// Call `accumulate_param_grads` afterwards to move gradients into the
    /// parameter store.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::InvalidShape {
                op: "backward",
                shape: self.shape_of(loss),
                reason: "loss must be a scalar".into(),
            });
        }
        self.add_to_grad(loss.0, &[1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let grad = self.nodes[i].grad.clone().expect("checked above");
            let inputs = self.nodes[i].inputs.clone();
            self.backward_node(i, &grad, &inputs);
        }
        Ok(())
    }

    fn add_to_grad(&mut self, id: usize, delta: &[f64]) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let numel = self.nodes[id].value.numel();
        let g = self.nodes[id].grad.get_or_insert_with(|| vec![0.0; numel]);
        for (a, d) in g.iter_mut().zip(delta) {
            *a += d;
        }
    }

    fn backward_node(&mut self, i: usize, grad: &[f64], inputs: &[NodeId]) {
        match self.nodes[i].op {
            Op::Leaf => {}

            Op::Matmul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (sa, sb) = (self.shape_of(a), self.shape_of(b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let (da, db) = {
                    let av = self.nodes[a.0].value.values();
                    let bv = self.nodes[b.0].value.values();
                    let bt = kernels::transpose(bv, k, m);
                    let da = kernels::matmul(grad, &bt, n, m, k);
                    let at = kernels::transpose(av, n, k);
                    let db = kernels::matmul(&at, grad, k, n, m);
                    (da, db)
                };
                self.add_to_grad(a.0, &da);
                self.add_to_grad(b.0, &db);
            }

            Op::Transpose => {
                let x = inputs[0];
                let out_shape = self.shape_of(NodeId(i));
                let dx = kernels::transpose(grad, out_shape[0], out_shape[1]);
                self.add_to_grad(x.0, &dx);
            }

            Op::Add => {
                let (a, b) = (inputs[0], inputs[1]);
                let out = self.shape_of(NodeId(i));
                let da = reduce_to_shape(grad, &out, &self.shape_of(a));
                let db = reduce_to_shape(grad, &out, &self.shape_of(b));
                self.add_to_grad(a.0, &da);
                self.add_to_grad(b.0, &db);
            }

            Op::Sub => {
                let (a, b) = (inputs[0], inputs[1]);
                let out = self.shape_of(NodeId(i));
                let da = reduce_to_shape(grad, &out, &self.shape_of(a));
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                let db = reduce_to_shape(&neg, &out, &self.shape_of(b));
                self.add_to_grad(a.0, &da);
                self.add_to_grad(b.0, &db);
            }

            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let out = self.shape_of(NodeId(i));
                let (da, db) = {
                    let (sa, sb) = (self.shape_of(a), self.shape_of(b));
                    let ae = broadcast_to(self.nodes[a.0].value.values(), &sa, &out);
                    let be = broadcast_to(self.nodes[b.0].value.values(), &sb, &out);
                    let da_full: Vec<f64> = grad.iter().zip(&be).map(|(g, y)| g * y).collect();
                    let db_full: Vec<f64> = grad.iter().zip(&ae).map(|(g, x)| g * x).collect();
                    (
                        reduce_to_shape(&da_full, &out, &sa),
                        reduce_to_shape(&db_full, &out, &sb),
                    )
                };
                self.add_to_grad(a.0, &da);
                self.add_to_grad(b.0, &db);
            }

            Op::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                let out = self.shape_of(NodeId(i));
                let (da, db) = {
                    let (sa, sb) = (self.shape_of(a), self.shape_of(b));
                    let ae = broadcast_to(self.nodes[a.0].value.values(), &sa, &out);
                    let be = broadcast_to(self.nodes[b.0].value.values(), &sb, &out);
                    let da_full: Vec<f64> = grad.iter().zip(&be).map(|(g, y)| g / y).collect();
                    let db_full: Vec<f64> = grad
                        .iter()
                        .zip(ae.iter().zip(&be))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect();
                    (
                        reduce_to_shape(&da_full, &out, &sa),
                        reduce_to_shape(&db_full, &out, &sb),
                    )
                };
                self.add_to_grad(a.0, &da);
                self.add_to_grad(b.0, &db);
            }

            Op::Affine { a, .. } => {
                let dx: Vec<f64> = grad.iter().map(|g| a * g).collect();
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::Sigmoid => {
                let dx: Vec<f64> = {
                    let y = self.nodes[i].value.values();
                    grad.iter().zip(y).map(|(g, &s)| g * s * (1.0 - s)).collect()
                };
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::Tanh => {
                let dx: Vec<f64> = {
                    let y = self.nodes[i].value.values();
                    grad.iter().zip(y).map(|(g, &t)| g * (1.0 - t * t)).collect()
                };
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::Relu => {
                let dx: Vec<f64> = {
                    let x = self.nodes[inputs[0].0].value.values();
                    grad.iter()
                        .zip(x)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect()
                };
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::Ln => {
                let dx: Vec<f64> = {
                    let x = self.nodes[inputs[0].0].value.values();
                    grad.iter().zip(x).map(|(g, &v)| g / v).collect()
                };
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::Sqrt => {
                let dx: Vec<f64> = {
                    let y = self.nodes[i].value.values();
                    grad.iter().zip(y).map(|(g, &s)| g / (2.0 * s)).collect()
                };
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::Clamp { lo, hi } => {
                let dx: Vec<f64> = {
                    let x = self.nodes[inputs[0].0].value.values();
                    grad.iter()
                        .zip(x)
                        .map(|(g, &v)| if v >= lo && v <= hi { *g } else { 0.0 })
                        .collect()
                };
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::SoftmaxLastAxis => {
                let dx: Vec<f64> = {
                    let y = self.nodes[i].value.values();
                    let cols = *self.nodes[i].value.shape().last().unwrap();
                    let mut dx = vec![0.0; y.len()];
                    for ((grow, yrow), drow) in grad
                        .chunks(cols)
                        .zip(y.chunks(cols))
                        .zip(dx.chunks_mut(cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, s)| g * s).sum();
                        for ((d, &g), &s) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = s * (g - dot);
                        }
                    }
                    dx
                };
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::Concat { axis } => {
                let out_shape = self.shape_of(NodeId(i));
                let (outer, total, inner) = outer_inner(&out_shape, axis);
                let row_len = total * inner;
                let mut offset = 0;
                for &p in inputs {
                    let s = self.shape_of(p);
                    let chunk = s[axis] * inner;
                    let mut dp = vec![0.0; outer * chunk];
                    for o in 0..outer {
                        dp[o * chunk..(o + 1) * chunk].copy_from_slice(
                            &grad[o * row_len + offset..o * row_len + offset + chunk],
                        );
                    }
                    self.add_to_grad(p.0, &dp);
                    offset += chunk;
                }
            }

            Op::Slice { axis, start } => {
                let x = inputs[0];
                let in_shape = self.shape_of(x);
                let out_shape = self.shape_of(NodeId(i));
                let (outer, in_len, inner) = outer_inner(&in_shape, axis);
                let len = out_shape[axis];
                let mut dx = vec![0.0; outer * in_len * inner];
                for o in 0..outer {
                    let dst = o * in_len * inner + start * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&grad[src..src + len * inner]);
                }
                self.add_to_grad(x.0, &dx);
            }

            Op::Flip { axis } => {
                let shape = self.shape_of(NodeId(i));
                let dx = flip_data(grad, &shape, axis);
                self.add_to_grad(inputs[0].0, &dx);
            }

            Op::SumAxis { axis, keepdim } | Op::MeanAxis { axis, keepdim } => {
                let mean = matches!(self.nodes[i].op, Op::MeanAxis { .. });
                let _ = keepdim;
                let x = inputs[0];
                let in_shape = self.shape_of(x);
                let (outer, len, inner) = outer_inner(&in_shape, axis);
                let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = o * len * inner + l * inner;
                        for i2 in 0..inner {
                            dx[base + i2] = grad[o * inner + i2] * scale;
                        }
                    }
                }
                self.add_to_grad(x.0, &dx);
            }

            Op::SumAll => {
                let x = inputs[0];
                let n = self.nodes[x.0].value.numel();
                let dx = vec![grad[0]; n];
                self.add_to_grad(x.0, &dx);
            }

            Op::MeanAll => {
                let x = inputs[0];
                let n = self.nodes[x.0].value.numel();
                let dx = vec![grad[0] / n as f64; n];
                self.add_to_grad(x.0, &dx);
            }
        }
    }

    /// Moves parameter-leaf gradients into the store's grad slots
    /// (accumulating; callers zero between optimizer steps).
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Some(pid), Some(g)) = (node.param, node.grad.as_ref()) {
                store.get_mut(pid).accumulate_grad(g);
            }
        }
    }

    /// Parameter gradients of the last backward pass, keyed by id.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        self.nodes
            .iter()
            .filter_map(|n| match (&n.param, &n.grad) {
                (Some(pid), Some(g)) => Some((*pid, g.clone())),
                _ => None,
            })
            .collect()
    }
}

fn flip_data(v: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = outer_inner(shape, axis);
    let mut out = vec![0.0; v.len()];
    for o in 0..outer {
        for l in 0..len {
            let src = o * len * inner + l * inner;
            let dst = o * len * inner + (len - 1 - l) * inner;
            out[dst..dst + inner].copy_from_slice(&v[src..src + inner]);
        }
    }
    out
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul => "matmul",
        Op::Transpose => "transpose",
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::Div => "div",
        Op::Affine { .. } => "affine",
        Op::Sigmoid => "sigmoid",
        Op::Tanh => "tanh",
        Op::Relu => "relu",
        Op::Ln => "ln",
        Op::Sqrt => "sqrt",
        Op::Clamp { .. } => "clamp",
        Op::SoftmaxLastAxis => "softmax",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Flip { .. } => "flip",
        Op::SumAxis { .. } => "sum_axis",
        Op::MeanAxis { .. } => "mean_axis",
        Op::SumAll => "sum",
        Op::MeanAll => "mean",
    }
}
