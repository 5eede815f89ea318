//! Tape-based reverse-mode differentiation.
//!
//! Every forward operation appends a node holding its value and the handles
//! of its inputs. [`Tape::backward`] replays the nodes in reverse, propagating
//! adjoints, and consumes the tape so the graph is freed after each pass.
//!
//! Parameters are not copied onto the tape: a parameter node refers back to
//! the [`ParamStore`] the tape borrows.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleRows(Var, Var),
    Relu(Var),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    RowDot(Var, Var),
    MaxRows(Var, Vec<usize>),
    Dot(Var, Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Select(Var, Vec<usize>),
    LogSumExp(Var),
    BceWithLogits(Var, Vec<f64>),
}

impl Op {
    #[cfg(debug_assertions)]
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRowBias(..) => "add_row_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::ScaleRows(..) => "scale_rows",
            Op::Relu(_) => "relu",
            Op::RowSoftmax(_) => "row_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::RowDot(..) => "row_dot",
            Op::MaxRows(..) => "max_rows",
            Op::Dot(..) => "dot",
            Op::Sum(_) => "sum",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(_) => "reshape",
            Op::Select(..) => "select",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRowBias(a, b)
            | Op::ScaleRows(a, b)
            | Op::RowDot(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::RowSoftmax(a)
            | Op::SliceCols(a, ..)
            | Op::MaxRows(a, _)
            | Op::Sum(a)
            | Op::GatherRows(a, _)
            | Op::Reshape(a)
            | Op::Select(a, _)
            | Op::LogSumExp(a)
            | Op::BceWithLogits(a, _) => vec![*a],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        #[cfg(debug_assertions)]
        if !value.is_finite() {
            let inputs_finite = op.inputs().iter().all(|i| self.value(*i).is_finite());
            assert!(
                !inputs_finite,
                "{} produced non-finite output from finite inputs",
                op.name()
            );
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input leaf; its gradient is reported by [`Gradients::wrt`]
    /// when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad;
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an input leaf that requires a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    /// References a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    fn require_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    fn require_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_matrix("matmul", a)?;
        let (k2, n) = self.require_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("transpose", a)?;
        let out = transpose_raw(self.value(a).data(), m, n);
        let t = Tensor::new(&[n, m], out)?;
        Ok(self.push(Op::Transpose(a), t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_same("add", a, b)?;
        let x = self.value(a);
        let out: Vec<f64> = x.data().iter().zip(self.value(b).data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape(), out)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    /// Adds the vector `bias` to every row of the matrix `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("add_row_bias", x)?;
        if self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "add_row_bias",
                lhs: vec![m, n],
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(r, c)| r + c))
            .collect();
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::AddRowBias(x, bias), t))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| v * c).collect()).unwrap();
        self.push(Op::Scale(a, c), t)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| v + c).collect()).unwrap();
        self.push(Op::AddScalar(a), t)
    }

    /// Multiplies row `i` of matrix `x` by `s[i]`; `s` holds one value per row.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("scale_rows", x)?;
        if self.value(s).len() != m {
            return Err(Error::Dimension {
                op: "scale_rows",
                lhs: vec![m, n],
                rhs: self.shape(s).to_vec(),
            });
        }
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for i in 0..m {
            out[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= sv[i]);
        }
        let t = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::ScaleRows(x, s), t))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape(), x.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
        self.push(Op::Relu(a), t)
    }

    /// Softmax over the last axis, with the row maximum subtracted first.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols();
        let mut out = x.data().to_vec();
        if n > 0 {
            out.chunks_mut(n).for_each(softmax_in_place);
        }
        let t = Tensor::new(x.shape(), out).unwrap();
        self.push(Op::RowSoftmax(a), t)
    }

    /// Standardizes every row, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, d) = self.require_matrix("layer_norm", x)?;
        if d < 2 {
            return Err(Error::contract("layer_norm needs at least two features"));
        }
        for p in [gain, bias] {
            if self.value(p).len() != d {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: vec![m, d],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xv[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(&[m, d], out)?;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            t,
        ))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let (m, _) = self.require_matrix("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.require_matrix("concat_cols", p)?;
            if r != m {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(&[m, total], out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), t))
    }

    /// Stacks tensors along the first axis; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), t))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.require_matrix("slice_cols", x)?;
        if start > end || end > n {
            return Err(Error::contract(format!(
                "slice_cols {start}..{end} out of range for {n} columns"
            )));
        }
        let w = end - start;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + end]);
        }
        let t = Tensor::new(&[m, w], out)?;
        Ok(self.push(Op::SliceCols(x, start, end), t))
    }

    /// Row-wise inner products: the diagonal of `a bᵀ`, as a vector.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.require_same("row_dot", a, b)?;
        let (m, n) = self.require_matrix("row_dot", a)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out = (0..m)
            .map(|i| dot_raw(&av[i * n..(i + 1) * n], &bv[i * n..(i + 1) * n]))
            .collect();
        let t = Tensor::vector(out);
        Ok(self.push(Op::RowDot(a, b), t))
    }

    /// Per-column maximum over rows. Ties resolve to the first row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.require_matrix("max_rows", x)?;
        if m == 0 {
            return Err(Error::contract("max pooling over zero rows"));
        }
        let xv = self.value(x).data();
        let mut arg = vec![0usize; n];
        let mut out = xv[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                if xv[i * n + j] > out[j] {
                    out[j] = xv[i * n + j];
                    arg[j] = i;
                }
            }
        }
        let t = Tensor::vector(out);
        Ok(self.push(Op::MaxRows(x, arg), t))
    }

    /// Inner product of two equally sized tensors, as a `[1]` scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Dimension {
                op: "dot",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let t = Tensor::scalar(dot_raw(self.value(a).data(), self.value(b).data()));
        Ok(self.push(Op::Dot(a, b), t))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), t)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = self.require_matrix("gather_rows", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= m) {
            return Err(Error::contract(format!("row {bad} out of range for {m} rows")));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            out.extend_from_slice(&tv[i * n..(i + 1) * n]);
        }
        let t = Tensor::new(&[ids.len(), n], out)?;
        Ok(self.push(Op::GatherRows(table, ids.to_vec()), t))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), t))
    }

    /// Picks entries of a flat tensor by index, producing a vector.
    pub fn select(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.len()) {
            return Err(Error::contract(format!("index {bad} out of range for {}", x.len())));
        }
        let t = Tensor::vector(idx.iter().map(|&i| x[i]).collect());
        Ok(self.push(Op::Select(a, idx.to_vec()), t))
    }

    /// `log Σ exp(x)` over all entries, computed with a max shift.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a).data();
        if x.is_empty() {
            return Err(Error::contract("log-sum-exp of an empty set"));
        }
        let t = Tensor::scalar(log_sum_exp_raw(x));
        Ok(self.push(Op::LogSumExp(a), t))
    }

    /// Mean binary cross-entropy of logits against `{0, 1}` targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let s = self.value(logits).data();
        if s.len() != targets.len() || s.is_empty() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let total: f64 = s.iter().zip(targets).map(|(&z, &y)| bce_logit_raw(z, y)).sum();
        let t = Tensor::scalar(total / s.len() as f64);
        Ok(self.push(Op::BceWithLogits(logits, targets.to_vec()), t))
    }

    /// Runs reverse accumulation from the scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let n_loss = self.value(loss).len();
        if n_loss != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = (0..self.nodes.len()).map(|i| self.shape(Var(i)).to_vec()).collect();
        let mut params = vec![None; self.param_nodes.len()];
        for (p, v) in self.param_nodes.iter().enumerate() {
            if let Some(v) = v {
                params[p] = grads[v.0].clone();
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
            shapes,
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = self.value(Var(idx));
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.nodes[a.0].requires_grad {
                    // dA = dC Bᵀ
                    let bt = transpose_raw(bv, k, n);
                    send(*a, matmul_raw(g, &bt, m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ dC
                    let at = transpose_raw(av, m, k);
                    send(*b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                send(*a, transpose_raw(g, n, m));
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::AddRowBias(x, b) => {
                let n = self.value(*b).len();
                send(*x, g.to_vec());
                let mut gb = vec![0.0; n];
                if n > 0 {
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                    }
                }
                send(*b, gb);
            }
            Op::Scale(a, c) => send(*a, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::ScaleRows(x, s) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x).data();
                let sv = self.value(*s).data();
                let mut gx = g.to_vec();
                let mut gs = vec![0.0; m];
                for i in 0..m {
                    let row = i * n..(i + 1) * n;
                    gs[i] = dot_raw(&g[row.clone()], &xv[row.clone()]);
                    gx[row].iter_mut().for_each(|v| *v *= sv[i]);
                }
                send(*x, gx);
                send(*s, gs);
            }
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                send(
                    *a,
                    g.iter()
                        .zip(xv)
                        .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                        .collect(),
                );
            }
            Op::RowSoftmax(a) => {
                let n = out.cols();
                let y = out.data();
                let mut gx = vec![0.0; y.len()];
                if n > 0 {
                    for ((gr, yr), dst) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                        let inner = dot_raw(gr, yr);
                        for j in 0..n {
                            dst[j] = yr[j] * (gr[j] - inner);
                        }
                    }
                }
                send(*a, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gain).len();
                let m = inv_std.len();
                let gv = self.value(*gain).data();
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                let mut gx = vec![0.0; m * d];
                for i in 0..m {
                    let gr = &g[i * d..(i + 1) * d];
                    let hr = &xhat[i * d..(i + 1) * d];
                    let mut mean_gh = 0.0;
                    let mut mean_ghh = 0.0;
                    for j in 0..d {
                        ggain[j] += gr[j] * hr[j];
                        gbias[j] += gr[j];
                        let gh = gr[j] * gv[j];
                        mean_gh += gh;
                        mean_ghh += gh * hr[j];
                    }
                    mean_gh /= d as f64;
                    mean_ghh /= d as f64;
                    for j in 0..d {
                        let gh = gr[j] * gv[j];
                        gx[i * d + j] = inv_std[i] * (gh - mean_gh - hr[j] * mean_ghh);
                    }
                }
                send(*x, gx);
                send(*gain, ggain);
                send(*bias, gbias);
            }
            Op::ConcatCols(parts) => {
                let m = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    let mut gp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    send(*p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    send(*p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceCols(x, start, end) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let w = end - start;
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    gx[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(*x, gx);
            }
            Op::RowDot(a, b) => {
                let n = self.shape(*a)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let ga = bv.iter().enumerate().map(|(i, v)| v * g[i / n]).collect();
                let gb = av.iter().enumerate().map(|(i, v)| v * g[i / n]).collect();
                send(*a, ga);
                send(*b, gb);
            }
            Op::MaxRows(x, arg) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let mut gx = vec![0.0; m * n];
                for (j, &i) in arg.iter().enumerate() {
                    gx[i * n + j] += g[j];
                }
                send(*x, gx);
            }
            Op::Dot(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                send(*a, bv.iter().map(|v| v * g[0]).collect());
                send(*b, av.iter().map(|v| v * g[0]).collect());
            }
            Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).len()]),
            Op::GatherRows(table, ids) => {
                let (m, n) = (self.shape(*table)[0], self.shape(*table)[1]);
                let mut gt = vec![0.0; m * n];
                for (r, &i) in ids.iter().enumerate() {
                    gt[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(&g[r * n..(r + 1) * n])
                        .for_each(|(a, b)| *a += b);
                }
                send(*table, gt);
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
            Op::Select(a, idx) => {
                let mut ga = vec![0.0; self.value(*a).len()];
                for (k, &i) in idx.iter().enumerate() {
                    ga[i] += g[k];
                }
                send(*a, ga);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a).data();
                let l = out.item();
                send(*a, x.iter().map(|v| (v - l).exp() * g[0]).collect());
            }
            Op::BceWithLogits(a, targets) => {
                let s = self.value(*a).data();
                let k = s.len() as f64;
                send(
                    *a,
                    s.iter()
                        .zip(targets)
                        .map(|(&z, &y)| (sigmoid(z) - y) * g[0] / k)
                        .collect(),
                );
            }
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        let g = self.nodes[v.0].as_ref()?;
        Tensor::new(&self.shapes[v.0], g.clone()).ok()
    }

    /// Gradient with respect to a stored parameter, flattened.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0)?.as_deref()
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o += aip * bv);
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub(crate) fn log_sum_exp_raw(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y log σ(z) + (1-y) log(1-σ(z))]` in the overflow-free form.
pub(crate) fn bce_logit_raw(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
