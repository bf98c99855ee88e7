//! Reverse-mode automatic differentiation over whole-tensor operations.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients
//! into every node that (transitively) depends on a leaf created with
//! [`Tape::param`]. Leaves created with [`Tape::constant`] never receive
//! gradients and cut the propagation.

use super::tensor::{matmul_a_bt, matmul_at_b, matmul_raw, Tensor};
use super::NumericsError;

/// Norms below this are treated as zero by the normalization primitives.
pub const ZERO_NORM: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    MeanRows(Var, Vec<Vec<usize>>),
    Softmax(Var),
    MaskedSoftmax(Var),
    MaskedLogSumExp(Var, Vec<bool>),
    Log(Var, f64),
    Exp(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    NormalizeRows(Var, Vec<f64>),
    Cosine(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the differentiated scalar with respect to `v`.
    ///
    /// Returns `None` for constants and for nodes the output does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`], but yields an all-zero tensor of `like`'s shape
    /// when no gradient reached `v`.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

#[derive(Debug, Default)]
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), NumericsError> {
        let t = self.value(v);
        if t.rank() != 2 {
            return Err(NumericsError::RankMismatch {
                op,
                expected: 2,
                found: t.rank(),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn non_empty(&self, v: Var, op: &'static str) -> Result<(), NumericsError> {
        if self.value(v).is_empty() {
            return Err(NumericsError::EmptyTensor(op));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.value(a).same_shape(self.value(b), "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let cols = self.value(a).cols();
        if self.value(b).rank() != 1 || self.value(b).len() != cols {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut value = self.value(a).clone();
        let bias = self.value(b).data().to_vec();
        for row in value.data_mut().chunks_mut(cols) {
            for (x, bv) in row.iter_mut().zip(&bias) {
                *x += bv;
            }
        }
        Ok(self.push(value, Op::AddRow(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.value(a).same_shape(self.value(b), "mul")?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().for_each(|x| *x *= factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    /// Selects rows of a matrix (with repetition allowed).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let (rows, cols) = self.matrix_dims(table, "gather_rows")?;
        let src = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(NumericsError::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::new(vec![indices.len(), cols], data)?;
        Ok(self.push(value, Op::GatherRows(table, indices.to_vec()), &[table]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::EmptyTensor("concat_rows"))?;
        let (_, cols) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, cols],
                    rhs: vec![r, c],
                });
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row `g` of the output is the mean of the rows of `x` listed in `groups[g]`.
    pub fn mean_rows(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var, NumericsError> {
        let (rows, cols) = self.matrix_dims(x, "mean_rows")?;
        let src = self.value(x);
        let mut data = vec![0.0; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(NumericsError::EmptyTensor("mean_rows"));
            }
            let out = &mut data[g * cols..(g + 1) * cols];
            for &r in members {
                if r >= rows {
                    return Err(NumericsError::IndexOutOfRange { index: r, len: rows });
                }
                for (o, v) in out.iter_mut().zip(src.row(r)) {
                    *o += v;
                }
            }
            let inv = 1.0 / members.len() as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor::new(vec![groups.len(), cols], data)?;
        Ok(self.push(value, Op::MeanRows(x, groups.to_vec()), &[x]))
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.non_empty(x, "softmax")?;
        let mut value = self.value(x).clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            softmax_in_place(row, None);
        }
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Softmax over the last dimension where columns with `keep[j] == false`
    /// behave as if their logit were negative infinity. A row with no kept
    /// column yields all zeros.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var, NumericsError> {
        self.non_empty(x, "masked_softmax")?;
        let cols = self.value(x).cols();
        if keep.len() != cols {
            return Err(NumericsError::LengthMismatch {
                expected: cols,
                found: keep.len(),
            });
        }
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(cols) {
            softmax_in_place(row, Some(keep));
        }
        Ok(self.push(value, Op::MaskedSoftmax(x), &[x]))
    }

    /// Per-row `log(sum_j exp(x_ij))` over entries with `keep[i*cols + j]`.
    /// Every row must keep at least one entry. Output shape is `[rows]`.
    pub fn masked_log_sum_exp(&mut self, x: Var, keep: &[bool]) -> Result<Var, NumericsError> {
        self.non_empty(x, "masked_log_sum_exp")?;
        let src = self.value(x);
        if keep.len() != src.len() {
            return Err(NumericsError::LengthMismatch {
                expected: src.len(),
                found: keep.len(),
            });
        }
        let cols = src.cols();
        let rows = src.rows();
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = src.row(i);
            let mask = &keep[i * cols..(i + 1) * cols];
            if !mask.contains(&true) {
                return Err(NumericsError::EmptyTensor("masked_log_sum_exp row"));
            }
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row
                .iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(v, _)| (v - max).exp())
                .sum();
            out.push(total.ln() + max);
        }
        let value = Tensor::vector(out);
        Ok(self.push(value, Op::MaskedLogSumExp(x, keep.to_vec()), &[x]))
    }

    /// Natural log with inputs clamped below at `floor`; the gradient is zero
    /// where the clamp is active.
    pub fn log(&mut self, x: Var, floor: f64) -> Var {
        let mut value = self.value(x).clone();
        value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.max(floor).ln());
        self.push(value, Op::Log(x, floor), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.exp());
        self.push(value, Op::Exp(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.non_empty(x, "mean")?;
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), &[x]))
    }

    /// Layer normalization over the last dimension with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        self.non_empty(x, "layer_norm")?;
        let src = self.value(x);
        let cols = src.cols();
        for p in [gain, bias] {
            let t = self.value(p);
            if t.rank() != 1 || t.len() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: src.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.rows();
        let mut normalized = vec![0.0; src.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![0.0; src.len()];
        for i in 0..rows {
            let row = src.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..cols {
                let n = (row[j] - mean) * inv;
                normalized[i * cols + j] = n;
                out[i * cols + j] = g[j] * n + b[j];
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Scales each row to unit Euclidean norm; rows with norm below
    /// [`ZERO_NORM`] map to zero and pass no gradient.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.non_empty(x, "normalize_rows")?;
        let mut value = self.value(x).clone();
        let cols = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        for row in value.data_mut().chunks_mut(cols) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(norm);
            if norm < ZERO_NORM {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(self.push(value, Op::NormalizeRows(x, norms), &[x]))
    }

    /// Cosine similarity of two equal-length vectors, as a scalar node.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var, NumericsError> {
        let (a, b) = (self.value(u), self.value(v));
        if a.len() != b.len() {
            return Err(NumericsError::LengthMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        let c = super::cosine_similarity(a.data(), b.data())?;
        Ok(self.push(Tensor::scalar(c), Op::Cosine(u, v), &[u, v]))
    }

    /// Reverse pass from a one-element output node.
    pub fn backward(&self, output: Var) -> Result<Gradients, NumericsError> {
        if self.value(output).len() != 1 {
            return Err(NumericsError::ShapeMismatch {
                op: "backward",
                lhs: self.value(output).shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.value(output).shape().to_vec(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut accumulate = |v: Var, g: Tensor| {
            if !self.wants(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let shaped = |like: &Tensor, data: Vec<f64>| {
            Tensor::new(like.shape().to_vec(), data).expect("gradient shape follows its node")
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.wants(*a) {
                    accumulate(*a, shaped(av, matmul_a_bt(up.data(), bv.data(), m, n, k)));
                }
                if self.wants(*b) {
                    accumulate(*b, shaped(bv, matmul_at_b(av.data(), up.data(), m, k, n)));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (out.shape()[0], out.shape()[1]);
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        data[j * m + i] = up.data()[i * n + j];
                    }
                }
                accumulate(*a, shaped(self.value(*a), data));
            }
            Op::Add(a, b) => {
                accumulate(*a, up.clone());
                accumulate(*b, up.clone());
            }
            Op::AddRow(a, b) => {
                accumulate(*a, up.clone());
                if self.wants(*b) {
                    let cols = up.cols();
                    let mut gb = vec![0.0; cols];
                    for row in up.data().chunks(cols) {
                        for (g, v) in gb.iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                    accumulate(*b, shaped(self.value(*b), gb));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let g = up.data().iter().zip(bv.data()).map(|(u, y)| u * y).collect();
                    accumulate(*a, shaped(av, g));
                }
                if self.wants(*b) {
                    let g = up.data().iter().zip(av.data()).map(|(u, x)| u * x).collect();
                    accumulate(*b, shaped(bv, g));
                }
            }
            Op::Scale(a, f) => {
                let g = up.data().iter().map(|u| u * f).collect();
                accumulate(*a, shaped(self.value(*a), g));
            }
            Op::GatherRows(table, indices) => {
                let tv = self.value(*table);
                let cols = tv.cols();
                let mut g = vec![0.0; tv.len()];
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut g[i * cols..(i + 1) * cols];
                    for (d, u) in dst.iter_mut().zip(up.row(r)) {
                        *d += u;
                    }
                }
                accumulate(*table, shaped(tv, g));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.len();
                    if self.wants(p) {
                        accumulate(p, shaped(pv, up.data()[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::MeanRows(x, groups) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut g = vec![0.0; xv.len()];
                for (gi, members) in groups.iter().enumerate() {
                    let inv = 1.0 / members.len() as f64;
                    for &r in members {
                        let dst = &mut g[r * cols..(r + 1) * cols];
                        for (d, u) in dst.iter_mut().zip(up.row(gi)) {
                            *d += u * inv;
                        }
                    }
                }
                accumulate(*x, shaped(xv, g));
            }
            Op::Softmax(x) | Op::MaskedSoftmax(x) => {
                let cols = out.cols();
                let mut g = vec![0.0; out.len()];
                for (i, dst) in g.chunks_mut(cols).enumerate() {
                    let y = out.row(i);
                    let dy = up.row(i);
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        dst[j] = y[j] * (dy[j] - dot);
                    }
                }
                accumulate(*x, shaped(self.value(*x), g));
            }
            Op::MaskedLogSumExp(x, keep) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut g = vec![0.0; xv.len()];
                for i in 0..xv.rows() {
                    let lse = out.data()[i];
                    let u = up.data()[i];
                    for j in 0..cols {
                        let k = i * cols + j;
                        if keep[k] {
                            g[k] = u * (xv.data()[k] - lse).exp();
                        }
                    }
                }
                accumulate(*x, shaped(xv, g));
            }
            Op::Log(x, floor) => {
                let xv = self.value(*x);
                let g = xv
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&v, u)| if v > *floor { u / v } else { 0.0 })
                    .collect();
                accumulate(*x, shaped(xv, g));
            }
            Op::Exp(x) => {
                let g = out.data().iter().zip(up.data()).map(|(y, u)| y * u).collect();
                accumulate(*x, shaped(self.value(*x), g));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let g = xv
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(&v, u)| if v > 0.0 { *u } else { 0.0 })
                    .collect();
                accumulate(*x, shaped(xv, g));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(*x, Tensor::filled(xv.shape().to_vec(), up.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let each = up.item() / xv.len() as f64;
                accumulate(*x, Tensor::filled(xv.shape().to_vec(), each));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let cols = out.cols();
                let g = self.value(*gain).data();
                if self.wants(*x) {
                    let mut dx = vec![0.0; out.len()];
                    for (i, dst) in dx.chunks_mut(cols).enumerate() {
                        let dy = up.row(i);
                        let xhat = &normalized[i * cols..(i + 1) * cols];
                        let dxhat: Vec<f64> = dy.iter().zip(g).map(|(a, b)| a * b).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
                        let n = cols as f64;
                        for j in 0..cols {
                            dst[j] = inv_std[i] / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
                        }
                    }
                    accumulate(*x, shaped(self.value(*x), dx));
                }
                if self.wants(*gain) || self.wants(*bias) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for i in 0..out.rows() {
                        let dy = up.row(i);
                        for j in 0..cols {
                            dg[j] += dy[j] * normalized[i * cols + j];
                            db[j] += dy[j];
                        }
                    }
                    accumulate(*gain, shaped(self.value(*gain), dg));
                    accumulate(*bias, shaped(self.value(*bias), db));
                }
            }
            Op::NormalizeRows(x, norms) => {
                let cols = out.cols();
                let mut g = vec![0.0; out.len()];
                for (i, dst) in g.chunks_mut(cols).enumerate() {
                    if norms[i] < ZERO_NORM {
                        continue;
                    }
                    let y = out.row(i);
                    let dy = up.row(i);
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        dst[j] = (dy[j] - y[j] * dot) / norms[i];
                    }
                }
                accumulate(*x, shaped(self.value(*x), g));
            }
            Op::Cosine(u, v) => {
                let (a, b) = (self.value(*u).data(), self.value(*v).data());
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na < ZERO_NORM || nb < ZERO_NORM {
                    return;
                }
                let c = out.item();
                let s = up.item();
                if self.wants(*u) {
                    let g = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| s * (y / (na * nb) - c * x / (na * na)))
                        .collect();
                    accumulate(*u, shaped(self.value(*u), g));
                }
                if self.wants(*v) {
                    let g = b
                        .iter()
                        .zip(a)
                        .map(|(y, x)| s * (x / (na * nb) - c * y / (nb * nb)))
                        .collect();
                    accumulate(*v, shaped(self.value(*v), g));
                }
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64], keep: Option<&[bool]>) {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let max = (0..row.len())
        .filter(|&j| kept(j))
        .map(|j| row[j])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        if kept(j) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = 0.0;
        }
    }
    row.iter_mut().for_each(|v| *v /= total);
}
