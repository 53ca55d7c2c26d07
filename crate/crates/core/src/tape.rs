//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and whatever the
//! backward rule needs. Nodes only reference earlier nodes, so a single reverse
//! sweep over the tape visits each node once in topological order.
//!
//! Shapes are aligned explicitly: elementwise operations accept two equally
//! shaped operands or a one-element right operand, and row-broadcasting of a
//! bias goes through [`Tape::broadcast_rows`]. All reductions accumulate in
//! flat row-major order, left to right.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Distances below this are treated as coincident points.
pub const COINCIDENT_EPS: f64 = 1e-8;

const MIN_DIVISOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryOp,
        a: Var,
        b: Var,
        b_scalar: bool,
    },
    Scalar {
        kind: BinaryOp,
        a: Var,
        c: f64,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    BroadcastRows {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Exp {
        a: Var,
    },
    Ln {
        a: Var,
    },
    Reduce {
        kind: ReduceKind,
        a: Var,
        axis: Option<usize>,
    },
    Softmax {
        a: Var,
        t: f64,
    },
    LogSoftmax {
        a: Var,
        t: f64,
    },
    PairwiseL2 {
        a: Var,
    },
    Gather {
        a: Var,
        indices: Vec<usize>,
    },
    AngleCos {
        a: Var,
        triples: Vec<[usize; 3]>,
    },
    Huber {
        a: Var,
        b: Var,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } | Op::Huber { a, b } => vec![*a, *b],
            Op::Scalar { a, .. }
            | Op::BroadcastRows { a }
            | Op::Relu { a }
            | Op::Exp { a }
            | Op::Ln { a }
            | Op::Reduce { a, .. }
            | Op::Softmax { a, .. }
            | Op::LogSoftmax { a, .. }
            | Op::PairwiseL2 { a }
            | Op::Gather { a, .. }
            | Op::AngleCos { a, .. } => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not require gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
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
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// `a (op) b` where `b` has `a`'s shape or holds a single element.
    pub fn elementwise(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let b_scalar = if av.shape() == bv.shape() {
            false
        } else if bv.is_scalar() {
            true
        } else {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        };
        if kind == BinaryOp::Div && bv.data().iter().any(|x| x.abs() < MIN_DIVISOR) {
            return Err(Error::DivisionByZero { op: "div" });
        }
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if b_scalar { bv.data()[0] } else { bv.data()[i] };
                apply(kind, x, y)
            })
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        self.push(
            "elementwise",
            Op::Binary {
                kind,
                a,
                b,
                b_scalar,
            },
            value,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(BinaryOp::Div, a, b)
    }

    /// `a (op) c` for a constant `c`.
    pub fn scalar_op(&mut self, kind: BinaryOp, a: Var, c: f64) -> Result<Var> {
        if kind == BinaryOp::Div && c.abs() < MIN_DIVISOR {
            return Err(Error::DivisionByZero { op: "div_scalar" });
        }
        let value = self.value(a).map(|x| apply(kind, x, c));
        self.push("scalar_op", Op::Scalar { kind, a, c }, value)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.scalar_op(BinaryOp::Add, a, c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.scalar_op(BinaryOp::Mul, a, c)
    }

    pub fn div_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.scalar_op(BinaryOp::Div, a, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, k) = av.dims2("matmul")?;
        let (k2, n) = bv.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let value = Tensor::from_parts(vec![m, n], matmul_raw(av.data(), bv.data(), m, k, n));
        self.push("matmul", Op::MatMul { a, b }, value)
    }

    /// Tiles a `[d]` or `[1, d]` tensor into `rows × d`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let av = self.value(a);
        let d = match av.shape() {
            &[d] | &[1, d] => d,
            s => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast_rows",
                    left: s.to_vec(),
                    right: vec![1, 0],
                })
            }
        };
        let mut data = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            data.extend_from_slice(av.data());
        }
        let value = Tensor::from_parts(vec![rows, d], data);
        self.push("broadcast_rows", Op::BroadcastRows { a }, value)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push("relu", Op::Relu { a }, value)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push("exp", Op::Exp { a }, value)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::ln);
        self.push("ln", Op::Ln { a }, value)
    }

    /// Sum or mean over all elements (`axis = None`) or along one axis.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: Option<usize>) -> Result<Var> {
        let av = self.value(a);
        let value = match axis {
            None => {
                let s = sum_ltr(av.data().iter().copied());
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / av.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                let (outer, len, inner) = axis_split(av.shape(), ax)?;
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let s = sum_ltr((0..len).map(|j| av.data()[(o * len + j) * inner + i]));
                        out[o * inner + i] = match kind {
                            ReduceKind::Sum => s,
                            ReduceKind::Mean => s / len as f64,
                        };
                    }
                }
                let mut shape = av.shape().to_vec();
                shape.remove(ax);
                Tensor::from_parts(shape, out)
            }
        };
        self.push("reduce", Op::Reduce { kind, a, axis }, value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, None)
    }

    /// Row-wise `softmax(z / t)` of a `batch × m` tensor.
    pub fn softmax(&mut self, a: Var, t: f64) -> Result<Var> {
        let value = softmax_rows(self.value(a), t, false)?;
        self.push("softmax", Op::Softmax { a, t }, value)
    }

    /// Row-wise `log softmax(z / t)` of a `batch × m` tensor.
    pub fn log_softmax(&mut self, a: Var, t: f64) -> Result<Var> {
        let value = softmax_rows(self.value(a), t, true)?;
        self.push("log_softmax", Op::LogSoftmax { a, t }, value)
    }

    /// Euclidean distance between every pair of rows of an `n × d` tensor.
    ///
    /// The result is exactly symmetric with an exactly zero diagonal.
    /// Coincident rows get distance 0 and contribute no gradient.
    pub fn pairwise_l2(&mut self, a: Var) -> Result<Var> {
        let value = pairwise_l2_values(self.value(a))?;
        self.push("pairwise_l2", Op::PairwiseL2 { a }, value)
    }

    /// Picks elements by flat row-major index into a 1-D tensor.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        let mut out = Vec::with_capacity(indices.len());
        for &i in &indices {
            match av.data().get(i) {
                Some(&v) => out.push(v),
                None => {
                    return Err(Error::IndexOutOfRange {
                        op: "gather",
                        index: i,
                        len: av.numel(),
                    })
                }
            }
        }
        let value = Tensor::from_parts(vec![indices.len()], out);
        self.push("gather", Op::Gather { a, indices }, value)
    }

    /// Cosine of the angle at row `v` between rows `u` and `w`, for each
    /// `[u, v, w]`. A triple with a coincident pair yields 0 with no gradient.
    pub fn angle_cos(&mut self, a: Var, triples: Vec<[usize; 3]>) -> Result<Var> {
        let av = self.value(a);
        let (n, _) = av.dims2("angle_cos")?;
        for t in &triples {
            if let Some(&bad) = t.iter().find(|&&i| i >= n) {
                return Err(Error::IndexOutOfRange {
                    op: "angle_cos",
                    index: bad,
                    len: n,
                });
            }
        }
        let out = triples
            .iter()
            .map(|&[u, v, w]| angle_parts(av, u, v, w).map_or(0.0, |p| p.cos))
            .collect();
        let value = Tensor::from_parts(vec![triples.len()], out);
        self.push("angle_cos", Op::AngleCos { a, triples }, value)
    }

    /// Elementwise Huber loss of `a - b` with unit threshold.
    pub fn huber(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "huber",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| huber_value(x, y))
            .collect();
        let value = Tensor::from_parts(av.shape().to_vec(), out);
        self.push("huber", Op::Huber { a, b }, value)
    }

    /// Propagates `d loss / d node` back to every node that requires gradients.
    ///
    /// Leaves that require gradients but are unreachable from `loss` get a
    /// zero gradient; nodes that do not require gradients get none.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.requires_grad {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![0.0; node.value.numel()]);
                Some(Tensor::from_parts(node.value.shape().to_vec(), data))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |var: Var, contribution: Vec<f64>| {
            if !self.nodes[var.0].requires_grad {
                return;
            }
            match &mut grads[var.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contribution) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Binary {
                kind,
                a,
                b,
                b_scalar,
            } => {
                let x = self.value(a).data();
                let y = self.value(b).data();
                let yb = |i: usize| if b_scalar { y[0] } else { y[i] };
                let ga: Vec<f64> = (0..g.len())
                    .map(|i| match kind {
                        BinaryOp::Add | BinaryOp::Sub => g[i],
                        BinaryOp::Mul => g[i] * yb(i),
                        BinaryOp::Div => g[i] / yb(i),
                    })
                    .collect();
                let gb_elem: Vec<f64> = (0..g.len())
                    .map(|i| match kind {
                        BinaryOp::Add => g[i],
                        BinaryOp::Sub => -g[i],
                        BinaryOp::Mul => g[i] * x[i],
                        BinaryOp::Div => -g[i] * x[i] / (yb(i) * yb(i)),
                    })
                    .collect();
                let gb = if b_scalar {
                    vec![sum_ltr(gb_elem.into_iter())]
                } else {
                    gb_elem
                };
                acc(a, ga);
                acc(b, gb);
            }
            &Op::Scalar { kind, a, c } => {
                let ga = g
                    .iter()
                    .map(|&gi| match kind {
                        BinaryOp::Add | BinaryOp::Sub => gi,
                        BinaryOp::Mul => gi * c,
                        BinaryOp::Div => gi / c,
                    })
                    .collect();
                acc(a, ga);
            }
            &Op::MatMul { a, b } => {
                let av = self.value(a);
                let bv = self.value(b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = G · Bᵀ
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] =
                            sum_ltr((0..n).map(|j| g[i * n + j] * bv.data()[p * n + j]));
                    }
                }
                // dB = Aᵀ · G
                let mut gb = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        gb[p * n + j] =
                            sum_ltr((0..m).map(|i| av.data()[i * k + p] * g[i * n + j]));
                    }
                }
                acc(a, ga);
                acc(b, gb);
            }
            &Op::BroadcastRows { a } => {
                let d = self.value(a).numel();
                let rows = g.len() / d;
                let ga = (0..d)
                    .map(|j| sum_ltr((0..rows).map(|r| g[r * d + j])))
                    .collect();
                acc(a, ga);
            }
            &Op::Relu { a } => {
                let x = self.value(a).data();
                acc(
                    a,
                    g.iter()
                        .zip(x)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect(),
                );
            }
            &Op::Exp { a } => {
                acc(a, g.iter().zip(out).map(|(&gi, &yi)| gi * yi).collect());
            }
            &Op::Ln { a } => {
                let x = self.value(a).data();
                acc(a, g.iter().zip(x).map(|(&gi, &xi)| gi / xi).collect());
            }
            &Op::Reduce { kind, a, axis } => {
                let av = self.value(a);
                let mut ga = vec![0.0; av.numel()];
                match axis {
                    None => {
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / av.numel() as f64,
                        };
                        ga.iter_mut().for_each(|e| *e = g[0] * scale);
                    }
                    Some(ax) => {
                        let (outer, len, inner) =
                            axis_split(av.shape(), ax).expect("axis validated in forward");
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / len as f64,
                        };
                        for o in 0..outer {
                            for j in 0..len {
                                for i in 0..inner {
                                    ga[(o * len + j) * inner + i] = g[o * inner + i] * scale;
                                }
                            }
                        }
                    }
                }
                acc(a, ga);
            }
            &Op::Softmax { a, t } => {
                let m = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; g.len()];
                for (r, (gr, yr)) in g.chunks(m).zip(out.chunks(m)).enumerate() {
                    let dot = sum_ltr(gr.iter().zip(yr).map(|(gi, yi)| gi * yi));
                    for i in 0..m {
                        ga[r * m + i] = yr[i] * (gr[i] - dot) / t;
                    }
                }
                acc(a, ga);
            }
            &Op::LogSoftmax { a, t } => {
                let m = *node.value.shape().last().unwrap_or(&1);
                let mut ga = vec![0.0; g.len()];
                for (r, (gr, lr)) in g.chunks(m).zip(out.chunks(m)).enumerate() {
                    let gsum = sum_ltr(gr.iter().copied());
                    for i in 0..m {
                        ga[r * m + i] = (gr[i] - lr[i].exp() * gsum) / t;
                    }
                }
                acc(a, ga);
            }
            &Op::PairwiseL2 { a } => {
                let ev = self.value(a);
                let (n, d) = (ev.shape()[0], ev.shape()[1]);
                let mut ga = vec![0.0; n * d];
                for u in 0..n {
                    for v in 0..n {
                        let dist = out[u * n + v];
                        if u == v || dist <= 0.0 {
                            continue;
                        }
                        let coef = (g[u * n + v] + g[v * n + u]) / dist;
                        for j in 0..d {
                            ga[u * d + j] += coef * (ev.row(u)[j] - ev.row(v)[j]);
                        }
                    }
                }
                acc(a, ga);
            }
            Op::Gather { a, indices } => {
                let mut ga = vec![0.0; self.value(*a).numel()];
                for (gi, &i) in g.iter().zip(indices) {
                    ga[i] += gi;
                }
                acc(*a, ga);
            }
            Op::AngleCos { a, triples } => {
                let ev = self.value(*a);
                let d = ev.shape()[1];
                let mut ga = vec![0.0; ev.numel()];
                for (gi, &[u, v, w]) in g.iter().zip(triples) {
                    let Some(p) = angle_parts(ev, u, v, w) else {
                        continue;
                    };
                    for j in 0..d {
                        let dcos_da = p.b[j] / (p.na * p.nb) - p.cos * p.a[j] / (p.na * p.na);
                        let dcos_db = p.a[j] / (p.na * p.nb) - p.cos * p.b[j] / (p.nb * p.nb);
                        ga[u * d + j] += gi * dcos_da;
                        ga[w * d + j] += gi * dcos_db;
                        ga[v * d + j] -= gi * (dcos_da + dcos_db);
                    }
                }
                acc(*a, ga);
            }
            &Op::Huber { a, b } => {
                let x = self.value(a).data();
                let y = self.value(b).data();
                let ga: Vec<f64> = (0..g.len())
                    .map(|i| g[i] * (x[i] - y[i]).clamp(-1.0, 1.0))
                    .collect();
                let gb = ga.iter().map(|v| -v).collect();
                acc(a, ga);
                acc(b, gb);
            }
        }
    }
}

fn apply(kind: BinaryOp, x: f64, y: f64) -> f64 {
    match kind {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => x / y,
    }
}

fn sum_ltr(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |acc, v| acc + v)
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            axis,
            shape: shape.to_vec(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = sum_ltr((0..k).map(|p| a[i * k + p] * b[p * n + j]));
        }
    }
    out
}

/// Huber loss of `a - b` with unit threshold.
pub fn huber_value(a: f64, b: f64) -> f64 {
    let r = (a - b).abs();
    if r <= 1.0 {
        0.5 * r * r
    } else {
        r - 0.5
    }
}

/// Row-wise softmax (or log-softmax) of `z / t`, stabilized by subtracting
/// each row's maximum.
pub fn softmax_rows(z: &Tensor, t: f64, log: bool) -> Result<Tensor> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidTemperature(t));
    }
    let (_, m) = z.dims2("softmax")?;
    let mut out = Vec::with_capacity(z.numel());
    for row in z.data().chunks(m) {
        let scaled: Vec<f64> = row.iter().map(|&v| v / t).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom = sum_ltr(scaled.iter().map(|&v| (v - max).exp()));
        if log {
            let lse = denom.ln();
            out.extend(scaled.iter().map(|&v| v - max - lse));
        } else {
            out.extend(scaled.iter().map(|&v| (v - max).exp() / denom));
        }
    }
    Ok(Tensor::from_parts(z.shape().to_vec(), out))
}

pub(crate) fn pairwise_l2_values(e: &Tensor) -> Result<Tensor> {
    let (n, _) = e.dims2("pairwise_l2")?;
    if n < 2 {
        return Err(Error::TooFewRows {
            op: "pairwise_l2",
            need: 2,
            got: n,
        });
    }
    let mut out = vec![0.0; n * n];
    for u in 0..n {
        for v in (u + 1)..n {
            let d = l2_distance(e.row(u), e.row(v));
            out[u * n + v] = d;
            out[v * n + u] = d;
        }
    }
    Ok(Tensor::from_parts(vec![n, n], out))
}

pub(crate) fn l2_distance(x: &[f64], y: &[f64]) -> f64 {
    sum_ltr(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b))).sqrt()
}

pub(crate) struct AngleParts {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub na: f64,
    pub nb: f64,
    pub cos: f64,
}

/// Difference vectors `s_u - s_v` and `s_w - s_v` and the cosine between
/// them, or `None` when either has norm below [`COINCIDENT_EPS`].
pub(crate) fn angle_parts(e: &Tensor, u: usize, v: usize, w: usize) -> Option<AngleParts> {
    let sv = e.row(v);
    let a: Vec<f64> = e.row(u).iter().zip(sv).map(|(x, y)| x - y).collect();
    let b: Vec<f64> = e.row(w).iter().zip(sv).map(|(x, y)| x - y).collect();
    let na = sum_ltr(a.iter().map(|x| x * x)).sqrt();
    let nb = sum_ltr(b.iter().map(|x| x * x)).sqrt();
    if na < COINCIDENT_EPS || nb < COINCIDENT_EPS {
        return None;
    }
    let dot = sum_ltr(a.iter().zip(&b).map(|(x, y)| x * y));
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    Some(AngleParts { a, b, na, nb, cos })
}
