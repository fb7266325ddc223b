//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every example or batch. Nodes are appended in
//! evaluation order, so the node list is already a topological order and the
//! backward sweep is a single reverse pass.

use std::collections::HashMap;

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{axis_extents, matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a user-supplied op: given the upstream
/// gradient and the input values, returns one gradient per input.
pub type CustomBackward = Box<dyn Fn(&Tensor, &[&Tensor]) -> Vec<Option<Tensor>>>;

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp { input: Var, axis: usize },
    MaxOverTime { input: Var, argmax: Vec<usize> },
    Gather { table: Var, ids: Vec<usize> },
    Dropout { input: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Nll { logp: Var, targets: Vec<usize> },
    GradReverse { input: Var, lambda: f64 },
    Custom { inputs: Vec<Var>, backward: CustomBackward },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    param_order: Vec<ParamId>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &[a.shape(), b.shape()]));
    }
    Ok(())
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::shape(op, &[t.shape(), &[axis]]));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free leaf that collects a gradient (used by gradient checks).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the
    /// same node so fan-out accumulates into a single gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        self.param_order.push(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n, out_shape) = match (ta.shape(), tb.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n, vec![*m, *n]),
            ([m, k], [k2]) if k == k2 => (*m, *k, 1, vec![*m]),
            ([k], [k2, n]) if k == k2 => (1, *k, *n, vec![*n]),
            _ => return Err(Error::shape("matmul", &[ta.shape(), tb.shape()])),
        };
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::shape("transpose", &[t.shape()]));
        }
        let out = t.transpose();
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `[n]` row vector to every row of a `[m, n]` matrix
    /// (or to a `[n]` vector).
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(m), self.value(row));
        if tr.rank() != 1 || tm.cols() != tr.numel() || tm.rank() > 2 || tm.rank() == 0 {
            return Err(Error::shape("add_row", &[tm.shape(), tr.shape()]));
        }
        let n = tr.numel();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % n])
            .collect();
        let out = Tensor::from_parts(tm.shape().to_vec(), data);
        let rg = self.rg(m) || self.rg(row);
        Ok(self.push(out, Op::AddRow(m, row), rg))
    }

    /// Multiplies row `t` of a `[T, n]` matrix by `s[t]`.
    pub fn scale_rows(&mut self, m: Var, s: Var) -> Result<Var> {
        let (tm, ts) = (self.value(m), self.value(s));
        if tm.rank() != 2 || ts.numel() != tm.rows() {
            return Err(Error::shape("scale_rows", &[tm.shape(), ts.shape()]));
        }
        let n = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * ts.data()[i / n])
            .collect();
        let out = Tensor::from_parts(tm.shape().to_vec(), data);
        let rg = self.rg(m) || self.rg(s);
        Ok(self.push(out, Op::ScaleRows(m, s), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero inputs".into()))?;
        let base = self.value(*first).shape().to_vec();
        check_axis("concat", self.value(*first), axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                let shapes: Vec<&[usize]> = inputs.iter().map(|&v| self.value(v).shape()).collect();
                return Err(Error::shape("concat", &shapes));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        check_axis("slice", t, axis)?;
        if len == 0 || start + len > t.shape()[axis] {
            return Err(Error::shape("slice", &[t.shape(), &[axis, start, len]]));
        }
        let (outer, alen, inner) = axis_extents(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, m: Var, r: usize) -> Result<Var> {
        let s = self.slice(m, 0, r, 1)?;
        let n = self.value(m).cols();
        self.reshape(s, &[n])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Stacks equal-length vectors into a `[T, n]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let mut reshaped = Vec::with_capacity(rows.len());
        for &r in rows {
            let n = self.value(r).numel();
            if self.value(r).rank() != 1 {
                return Err(Error::shape("stack", &[self.value(r).shape()]));
            }
            reshaped.push(self.reshape(r, &[1, n])?);
        }
        self.concat(&reshaped, 0)
    }

    fn last_axis_map(&self, a: Var, f: impl Fn(&[f64]) -> Vec<f64>) -> Tensor {
        let t = self.value(a);
        let n = t.cols();
        let data = t.data().chunks(n).flat_map(f).collect();
        Tensor::from_parts(t.shape().to_vec(), data)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = self.last_axis_map(a, super::tensor::softmax);
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = self.last_axis_map(a, |row| {
            let lse = super::tensor::logsumexp(row);
            row.iter().map(|v| v - lse).collect()
        });
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    /// Stable log-sum-exp reducing `axis`.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        check_axis("logsumexp", t, axis)?;
        let (outer, alen, inner) = axis_extents(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * inner);
        let mut buf = vec![0.0; alen];
        for o in 0..outer {
            for i in 0..inner {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = t.data()[(o * alen + k) * inner + i];
                }
                data.push(super::tensor::logsumexp(&buf));
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::LogSumExp { input: a, axis },
            rg,
        ))
    }

    /// Column-wise max of a `[T, d]` matrix. Ties resolve to the earliest row.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::shape("max_over_time", &[t.shape()]));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = vec![f64::NEG_INFINITY; cols];
        let mut argmax = vec![0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let v = t.data()[r * cols + c];
                if v > data[c] {
                    data[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::vector(data),
            Op::MaxOverTime { input: a, argmax },
            rg,
        ))
    }

    /// Rows `ids` of a `[V, d]` table, giving `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 || ids.is_empty() || ids.iter().any(|&i| i >= t.rows()) {
            return Err(Error::shape("gather", &[t.shape(), ids]));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_parts(vec![ids.len(), t.cols()], data);
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Applies a precomputed multiplicative mask.
    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.numel() {
            return Err(Error::shape("dropout", &[t.shape(), &[mask.len()]]));
        }
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout { input: a, mask }, rg))
    }

    /// Inverted dropout. A no-op when `p == 0`; callers skip it at evaluation.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask = (0..self.value(a).numel())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.apply_mask(a, mask)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise log-probs.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logp);
        if t.rank() != 2 || t.rows() != targets.len() || targets.iter().any(|&y| y >= t.cols()) {
            return Err(Error::shape("nll", &[t.shape(), targets]));
        }
        let n = targets.len() as f64;
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &y)| t.at(i, y))
            .sum::<f64>()
            / n;
        let rg = self.rg(logp);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                logp,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Result<Var> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gradient reversal factor must be >= 0, got {lambda}"
            )));
        }
        let out = self.value(a).clone();
        let rg = self.rg(a);
        Ok(self.push(out, Op::GradReverse { input: a, lambda }, rg))
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            rg,
        )
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(existing) => existing.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    /// Back-propagates from a scalar root, leaving `d root / d node` on every
    /// reachable node that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        let shape = self.value(root).shape().to_vec();
        self.nodes[root.0].grad = Some(Tensor::filled(&shape, 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let out = &self.nodes[i].value;
        let mut pending: Vec<(Var, Tensor)> = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = if ta.rank() == 2 { (ta.rows(), ta.cols()) } else { (1, ta.numel()) };
                let n = if tb.rank() == 2 { tb.cols() } else { 1 };
                if self.rg(*a) {
                    // dA = G · Bᵀ
                    let bt = transpose_raw(tb.data(), k, n);
                    let da = matmul_raw(g.data(), &bt, m, n, k);
                    pending.push((*a, Tensor::from_parts(ta.shape().to_vec(), da)));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · G
                    let at = transpose_raw(ta.data(), m, k);
                    let db = matmul_raw(&at, g.data(), k, m, n);
                    pending.push((*b, Tensor::from_parts(tb.shape().to_vec(), db)));
                }
            }
            Op::Transpose(a) => pending.push((*a, g.transpose())),
            Op::Add(a, b) => {
                pending.push((*a, g.clone()));
                pending.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                pending.push((*a, g.clone()));
                pending.push((*b, g.scale(-1.0)));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                pending.push((*a, zip_with(g, tb, |x, y| x * y)));
                pending.push((*b, zip_with(g, ta, |x, y| x * y)));
            }
            Op::AddRow(m, r) => {
                pending.push((*m, g.clone()));
                let n = self.value(*r).numel();
                let mut dr = vec![0.0; n];
                for (idx, v) in g.data().iter().enumerate() {
                    dr[idx % n] += v;
                }
                pending.push((*r, Tensor::vector(dr)));
            }
            Op::ScaleRows(m, s) => {
                let (tm, ts) = (self.value(*m), self.value(*s));
                let n = tm.cols();
                let dm = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(idx, v)| v * ts.data()[idx / n])
                    .collect();
                pending.push((*m, Tensor::from_parts(tm.shape().to_vec(), dm)));
                let mut ds = vec![0.0; ts.numel()];
                for (idx, (gv, mv)) in g.data().iter().zip(tm.data()).enumerate() {
                    ds[idx / n] += gv * mv;
                }
                pending.push((*s, Tensor::from_parts(ts.shape().to_vec(), ds)));
            }
            Op::Scale(a, f) => pending.push((*a, g.scale(*f))),
            Op::Tanh(a) => pending.push((*a, zip_with(g, out, |gv, y| gv * (1.0 - y * y)))),
            Op::Sigmoid(a) => pending.push((*a, zip_with(g, out, |gv, y| gv * y * (1.0 - y)))),
            Op::Exp(a) => pending.push((*a, zip_with(g, out, |gv, y| gv * y))),
            Op::Log(a) => pending.push((*a, zip_with(g, self.value(*a), |gv, x| gv / x))),
            Op::Abs(a) => pending.push((
                *a,
                zip_with(g, self.value(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            )),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_extents(out.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let len = t.shape()[*axis];
                    let mut d = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        d.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    pending.push((v, Tensor::from_parts(t.shape().to_vec(), d)));
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let t = self.value(*input);
                let (outer, alen, inner) = axis_extents(t.shape(), *axis);
                let len = out.shape()[*axis];
                let mut d = vec![0.0; t.numel()];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    d[base..base + len * inner].copy_from_slice(src);
                }
                pending.push((*input, Tensor::from_parts(t.shape().to_vec(), d)));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                pending.push((*a, Tensor::from_parts(shape, g.data().to_vec())));
            }
            Op::Softmax(a) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(out.numel());
                for (gy, y) in g.data().chunks(n).zip(out.data().chunks(n)) {
                    let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                    d.extend(gy.iter().zip(y).map(|(gv, yv)| yv * (gv - dot)));
                }
                pending.push((*a, Tensor::from_parts(out.shape().to_vec(), d)));
            }
            Op::LogSoftmax(a) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(out.numel());
                for (gy, y) in g.data().chunks(n).zip(out.data().chunks(n)) {
                    let total: f64 = gy.iter().sum();
                    d.extend(gy.iter().zip(y).map(|(gv, lp)| gv - lp.exp() * total));
                }
                pending.push((*a, Tensor::from_parts(out.shape().to_vec(), d)));
            }
            Op::LogSumExp { input, axis } => {
                let t = self.value(*input);
                let (outer, alen, inner) = axis_extents(t.shape(), *axis);
                let mut d = vec![0.0; t.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let lse = out.data()[o * inner + i];
                        let gv = g.data()[o * inner + i];
                        for k in 0..alen {
                            let idx = (o * alen + k) * inner + i;
                            d[idx] = gv * (t.data()[idx] - lse).exp();
                        }
                    }
                }
                pending.push((*input, Tensor::from_parts(t.shape().to_vec(), d)));
            }
            Op::MaxOverTime { input, argmax } => {
                let t = self.value(*input);
                let cols = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (c, &r) in argmax.iter().enumerate() {
                    d[r * cols + c] = g.data()[c];
                }
                pending.push((*input, Tensor::from_parts(t.shape().to_vec(), d)));
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let cols = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        d[id * cols + c] += g.data()[r * cols + c];
                    }
                }
                pending.push((*table, Tensor::from_parts(t.shape().to_vec(), d)));
            }
            Op::Dropout { input, mask } => {
                let d = g.data().iter().zip(mask).map(|(a, b)| a * b).collect();
                pending.push((*input, Tensor::from_parts(g.shape().to_vec(), d)));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                pending.push((*a, Tensor::filled(&shape, g.item())));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let v = g.item() / t.numel() as f64;
                pending.push((*a, Tensor::filled(t.shape(), v)));
            }
            Op::Nll { logp, targets } => {
                let t = self.value(*logp);
                let mut d = vec![0.0; t.numel()];
                let scale = -g.item() / targets.len() as f64;
                for (r, &y) in targets.iter().enumerate() {
                    d[r * t.cols() + y] = scale;
                }
                pending.push((*logp, Tensor::from_parts(t.shape().to_vec(), d)));
            }
            Op::GradReverse { input, lambda } => pending.push((*input, g.scale(-lambda))),
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let grads = backward(g, &values);
                for (&v, dg) in inputs.iter().zip(grads) {
                    if let Some(dg) = dg {
                        pending.push((v, dg));
                    }
                }
            }
        }
        for (v, dg) in pending {
            self.accumulate(v, dg);
        }
    }

    /// Gradients of every parameter placed on this tape (zero when unreached).
    pub fn param_grads(&self) -> Gradients {
        let mut out = Gradients::new();
        for id in &self.param_order {
            let v = self.params[id];
            let g = self.nodes[v.0]
                .grad
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            out.insert(*id, g);
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(b.shape().to_vec(), data)
}

fn transpose_raw(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
