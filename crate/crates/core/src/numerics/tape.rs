//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Every op appends one node to a [`Tape`]; nodes only reference earlier
//! nodes, so the tape is always in topological order and [`Tape::backward`]
//! is a single reverse sweep. A tape supports exactly one backward pass:
//! afterwards its saved intermediates are released and a second call is
//! rejected with a contract error. Forward values stay readable.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Transpose {
        a: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Relu(Var),
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        a: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        a: Var,
        idx: Vec<usize>,
    },
    Reshape(Var),
    MaxPool {
        a: Var,
        argmax: Vec<usize>,
    },
    Sum(Var),
    TopKSoftmax {
        a: Var,
        selected: Vec<bool>,
    },
    BceLogits {
        a: Var,
        labels: Vec<f64>,
    },
    Huber {
        a: Var,
        targets: Vec<f64>,
        delta: f64,
    },
}

/// Flat-index maps from an output position to each operand position.
/// `None` means the operand already has the output shape.
#[derive(Debug)]
struct Broadcast {
    lhs: Option<Vec<usize>>,
    rhs: Option<Vec<usize>>,
}

impl Broadcast {
    fn lhs_at(&self, o: usize) -> usize {
        self.lhs.as_ref().map_or(o, |m| m[o])
    }

    fn rhs_at(&self, o: usize) -> usize {
        self.rhs.as_ref().map_or(o, |m| m[o])
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `∂loss/∂var`; zeros when `var` is not on a path to the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Like [`Gradients::wrt`] but `None` when no gradient reached `var`.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn index_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let nd = out.len();
    let offset = nd - src.len();
    // Strides of `src`, zeroed on broadcast axes, aligned to `out`.
    let mut strides = vec![0usize; nd];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; nd];
    for _ in 0..numel {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Some(map)
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let g = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
    f(g);
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that participates in differentiation.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v` into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Broadcast)> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::dim(name, sa, sb))?;
        let bc = Broadcast {
            lhs: index_map(sa, &out_shape),
            rhs: index_map(sb, &out_shape),
        };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let numel: usize = out_shape.iter().product();
        let data = (0..numel)
            .map(|o| f(da[bc.lhs_at(o)], db[bc.rhs_at(o)]))
            .collect();
        Ok((Tensor::new(&out_shape, data)?, bc))
    }

    /// Elementwise sum with trailing-dimension broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b, bc), rg))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bc) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b, bc), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// Matrix product `[..., m, k] × [..., k, n]`. The right operand may also
    /// be a plain `[k, n]` matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let shared_rhs = batch_b.is_empty();
        if k != k2 || !(shared_rhs || batch_a == batch_b) {
            return Err(Error::dim("matmul", sa, sb));
        }
        let batch: usize = batch_a.iter().product();
        let mut out_shape = batch_a.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            let b_off = if shared_rhs { 0 } else { bi * k * n };
            kernels::gemm_nn(
                m,
                k,
                n,
                &da[bi * m * k..(bi + 1) * m * k],
                &db[b_off..b_off + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let value = Tensor::new(&out_shape, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        if sa.len() < 2 {
            return Err(Error::dim("transpose", &sa, &[]));
        }
        let (rows, cols) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out = vec![0.0; batch * rows * cols];
        let src = self.value(a).data();
        for bi in 0..batch {
            let r = bi * rows * cols..(bi + 1) * rows * cols;
            kernels::transpose(rows, cols, &src[r.clone()], &mut out[r]);
        }
        let mut shape = sa.clone();
        let nd = shape.len();
        shape.swap(nd - 2, nd - 1);
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::Transpose {
                a,
                batch,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let c = x.last_dim();
        if c == 0 || x.ndim() == 0 {
            return Err(Error::dim("softmax", x.shape(), &[]));
        }
        let mut out = vec![0.0; x.numel()];
        for (src, dst) in x.data().chunks(c).zip(out.chunks_mut(c)) {
            kernels::softmax_into(src, dst);
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Per-row normalisation over the last axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if d == 0 || xv.ndim() == 0 || gv.numel() != d || bv.numel() != d {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = xv.outer();
        let mut out = vec![0.0; xv.numel()];
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Exact GeLU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(kernels::gelu);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let sa = av.shape();
        if sa.is_empty() || start + len > sa[0] {
            return Err(Error::dim("slice_rows", sa, &[start, len]));
        }
        let inner: usize = sa[1..].iter().product();
        let data = av.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = sa.to_vec();
        shape[0] = len;
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SliceRows { a, start }, rg))
    }

    /// Stacks along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or(Error::EmptyInput("concat_rows"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.ndim() == 0 || pv.shape()[1..] != tail[..] {
                return Err(Error::dim("concat_rows", self.value(*first).shape(), pv.shape()));
            }
            rows += pv.shape()[0];
            data.extend_from_slice(pv.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let sa = av.shape();
        if sa.len() != 2 || start + len > sa[1] {
            return Err(Error::dim("slice_cols", sa, &[start, len]));
        }
        let (rows, cols) = (sa[0], sa[1]);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.data()[r * cols + start..r * cols + start + len]);
        }
        let value = Tensor::new(&[rows, len], data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::SliceCols { a, start, len }, rg))
    }

    /// Joins matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.value(*first).shape().first().copied().unwrap_or(0);
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat_cols", self.value(*first).shape(), s));
            }
            total += s[1];
        }
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            let c = pv.shape()[1];
            for r in 0..rows {
                data[r * total + off..r * total + off + c].copy_from_slice(pv.row(r));
            }
            off += c;
        }
        let value = Tensor::new(&[rows, total], data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Selects rows (first axis) by index; repeats are allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let sa = av.shape();
        if sa.is_empty() || idx.iter().any(|&i| i >= sa[0]) {
            return Err(Error::dim("gather_rows", sa, &[idx.len()]));
        }
        let inner: usize = sa[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&av.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = sa.to_vec();
        shape[0] = idx.len();
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Inverse of [`Tape::gather_rows`]: row `i` of `a` is added into row
    /// `idx[i]` of a zero tensor with `rows` rows.
    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let av = self.value(a);
        let sa = av.shape();
        if sa.is_empty() || sa[0] != idx.len() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::dim("scatter_rows", sa, &[rows]));
        }
        let inner: usize = sa[1..].iter().product();
        let mut data = vec![0.0; rows * inner];
        for (src, &dst) in idx.iter().enumerate() {
            for j in 0..inner {
                data[dst * inner + j] += av.data()[src * inner + j];
            }
        }
        let mut shape = sa.to_vec();
        shape[0] = rows;
        let value = Tensor::new(&shape, data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::ScatterRows {
                a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Max over axis 1 of a `[groups, k, channels]` tensor. Ties go to the
    /// lowest position, so the result is order independent within a group.
    pub fn max_pool(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let sa = av.shape();
        if sa.len() != 3 || sa[1] == 0 {
            return Err(Error::dim("max_pool", sa, &[]));
        }
        let (g, k, c) = (sa[0], sa[1], sa[2]);
        let mut out = vec![0.0; g * c];
        let mut argmax = vec![0usize; g * c];
        let d = av.data();
        for gi in 0..g {
            for ch in 0..c {
                let mut best = gi * k * c + ch;
                for ki in 1..k {
                    let at = (gi * k + ki) * c + ch;
                    if d[at] > d[best] {
                        best = at;
                    }
                }
                out[gi * c + ch] = d[best];
                argmax[gi * c + ch] = best;
            }
        }
        let value = Tensor::new(&[g, c], out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::MaxPool { a, argmax }, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per row of an `[s, m]` matrix: keep the `k` largest logits (ties toward
    /// the lower column), softmax over exactly those, zero elsewhere.
    pub fn top_k_softmax(&mut self, a: Var, k: usize) -> Result<Var> {
        let av = self.value(a);
        let sa = av.shape();
        if sa.len() != 2 || k == 0 || k > sa[1] {
            return Err(Error::dim("top_k_softmax", sa, &[k]));
        }
        let m = sa[1];
        let mut out = vec![0.0; av.numel()];
        let mut selected = vec![false; av.numel()];
        let mut buf = vec![0.0; k];
        let mut probs = vec![0.0; k];
        for r in 0..sa[0] {
            let row = av.row(r);
            let top = kernels::top_k_indices(row, k);
            for (slot, &j) in top.iter().enumerate() {
                buf[slot] = row[j];
            }
            kernels::softmax_into(&buf, &mut probs);
            for (slot, &j) in top.iter().enumerate() {
                out[r * m + j] = probs[slot];
                selected[r * m + j] = true;
            }
        }
        let value = Tensor::new(sa, out)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::TopKSoftmax { a, selected }, rg))
    }

    /// Elementwise binary cross-entropy on logits against constant labels.
    pub fn bce_with_logits(&mut self, a: Var, labels: &[f64]) -> Result<Var> {
        let av = self.value(a);
        if labels.len() != av.numel() {
            return Err(Error::dim("bce_with_logits", av.shape(), &[labels.len()]));
        }
        let data = av
            .data()
            .iter()
            .zip(labels)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::BceLogits {
                a,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise Huber loss of `a - targets` with threshold `delta`.
    pub fn huber(&mut self, a: Var, targets: &[f64], delta: f64) -> Result<Var> {
        let av = self.value(a);
        if targets.len() != av.numel() {
            return Err(Error::dim("huber", av.shape(), &[targets.len()]));
        }
        let data = av
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| {
                let r = (x - t).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                }
            })
            .collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            value,
            Op::Huber {
                a,
                targets: targets.to_vec(),
                delta,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Consumes the recorded graph: a second call on the same tape returns a
    /// contract error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Contract(
                "backward called twice on the same tape".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        let nodes = &self.nodes;
        for i in (0..=loss.0).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            backprop_node(&nodes[i], g, lo, nodes);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        self.consumed = true;
        for node in &mut self.nodes {
            node.op = Op::Leaf;
        }
        Ok(Gradients { grads, shapes })
    }
}

fn backprop_node(node: &Node, g: &[f64], lo: &mut [Option<Vec<f64>>], nodes: &[Node]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b, bc) => {
            accumulate(lo, nodes, *a, |ga| {
                for (o, &gv) in g.iter().enumerate() {
                    ga[bc.lhs_at(o)] += gv;
                }
            });
            accumulate(lo, nodes, *b, |gb| {
                for (o, &gv) in g.iter().enumerate() {
                    gb[bc.rhs_at(o)] += gv;
                }
            });
        }
        Op::Sub(a, b, bc) => {
            accumulate(lo, nodes, *a, |ga| {
                for (o, &gv) in g.iter().enumerate() {
                    ga[bc.lhs_at(o)] += gv;
                }
            });
            accumulate(lo, nodes, *b, |gb| {
                for (o, &gv) in g.iter().enumerate() {
                    gb[bc.rhs_at(o)] -= gv;
                }
            });
        }
        Op::Mul(a, b, bc) => {
            let (av, bv) = (val(*a), val(*b));
            accumulate(lo, nodes, *a, |ga| {
                for (o, &gv) in g.iter().enumerate() {
                    ga[bc.lhs_at(o)] += gv * bv[bc.rhs_at(o)];
                }
            });
            accumulate(lo, nodes, *b, |gb| {
                for (o, &gv) in g.iter().enumerate() {
                    gb[bc.rhs_at(o)] += gv * av[bc.lhs_at(o)];
                }
            });
        }
        Op::Scale(a, f) => accumulate(lo, nodes, *a, |ga| {
            for (x, &gv) in ga.iter_mut().zip(g) {
                *x += gv * f;
            }
        }),
        Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            shared_rhs,
        } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (*m, *k, *n);
            accumulate(lo, nodes, *a, |ga| {
                for bi in 0..*batch {
                    let b_off = if *shared_rhs { 0 } else { bi * k * n };
                    kernels::gemm_nt(
                        m,
                        n,
                        k,
                        &g[bi * m * n..(bi + 1) * m * n],
                        &bv[b_off..b_off + k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                    );
                }
            });
            accumulate(lo, nodes, *b, |gb| {
                for bi in 0..*batch {
                    let b_off = if *shared_rhs { 0 } else { bi * k * n };
                    kernels::gemm_tn(
                        m,
                        k,
                        n,
                        &av[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[b_off..b_off + k * n],
                    );
                }
            });
        }
        Op::Transpose {
            a,
            batch,
            rows,
            cols,
        } => accumulate(lo, nodes, *a, |ga| {
            let sz = rows * cols;
            for bi in 0..*batch {
                let gs = &g[bi * sz..(bi + 1) * sz];
                let dst = &mut ga[bi * sz..(bi + 1) * sz];
                // g is [cols, rows]; ga is [rows, cols].
                for i in 0..*rows {
                    for j in 0..*cols {
                        dst[i * cols + j] += gs[j * rows + i];
                    }
                }
            }
        }),
        Op::Softmax(a) => {
            let y = node.value.data();
            let c = node.value.last_dim();
            accumulate(lo, nodes, *a, |ga| {
                for r in 0..y.len() / c {
                    let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[r * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let gv = val(*gain);
            let d = gv.len();
            let rows = rstd.len();
            accumulate(lo, nodes, *x, |gx| {
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..d {
                        dxhat[j] = g[r * d + j] * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[r * d + j];
                    }
                    mean_d /= d as f64;
                    mean_dx /= d as f64;
                    for j in 0..d {
                        gx[r * d + j] +=
                            rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                    }
                }
            });
            accumulate(lo, nodes, *gain, |gg| {
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                }
            });
            accumulate(lo, nodes, *bias, |gb| {
                for r in 0..rows {
                    for j in 0..d {
                        gb[j] += g[r * d + j];
                    }
                }
            });
        }
        Op::Gelu(a) => {
            let av = val(*a);
            accumulate(lo, nodes, *a, |ga| {
                for ((x, &gv), &v) in ga.iter_mut().zip(g).zip(av) {
                    *x += gv * kernels::gelu_grad(v);
                }
            });
        }
        Op::Relu(a) => {
            let av = val(*a);
            accumulate(lo, nodes, *a, |ga| {
                for ((x, &gv), &v) in ga.iter_mut().zip(g).zip(av) {
                    if v > 0.0 {
                        *x += gv;
                    }
                }
            });
        }
        Op::SliceRows { a, start } => {
            let inner: usize = node.value.shape()[1..].iter().product();
            accumulate(lo, nodes, *a, |ga| {
                for (x, &gv) in ga[start * inner..].iter_mut().zip(g) {
                    *x += gv;
                }
            });
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p.0].value.numel();
                accumulate(lo, nodes, p, |gp| {
                    for (x, &gv) in gp.iter_mut().zip(&g[off..off + len]) {
                        *x += gv;
                    }
                });
                off += len;
            }
        }
        Op::SliceCols { a, start, len } => {
            let cols = nodes[a.0].value.shape()[1];
            accumulate(lo, nodes, *a, |ga| {
                for (r, chunk) in g.chunks(*len).enumerate() {
                    for (j, &gv) in chunk.iter().enumerate() {
                        ga[r * cols + start + j] += gv;
                    }
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let rows = node.value.shape()[0];
            let mut off = 0;
            for &p in parts {
                let c = nodes[p.0].value.shape()[1];
                accumulate(lo, nodes, p, |gp| {
                    for r in 0..rows {
                        for j in 0..c {
                            gp[r * c + j] += g[r * total + off + j];
                        }
                    }
                });
                off += c;
            }
        }
        Op::GatherRows { a, idx } => {
            let inner: usize = node.value.shape()[1..].iter().product();
            accumulate(lo, nodes, *a, |ga| {
                for (src, &dst) in idx.iter().enumerate() {
                    for j in 0..inner {
                        ga[dst * inner + j] += g[src * inner + j];
                    }
                }
            });
        }
        Op::ScatterRows { a, idx } => {
            let inner: usize = node.value.shape()[1..].iter().product();
            accumulate(lo, nodes, *a, |ga| {
                for (src, &dst) in idx.iter().enumerate() {
                    for j in 0..inner {
                        ga[src * inner + j] += g[dst * inner + j];
                    }
                }
            });
        }
        Op::Reshape(a) => accumulate(lo, nodes, *a, |ga| {
            for (x, &gv) in ga.iter_mut().zip(g) {
                *x += gv;
            }
        }),
        Op::MaxPool { a, argmax } => accumulate(lo, nodes, *a, |ga| {
            for (&at, &gv) in argmax.iter().zip(g) {
                ga[at] += gv;
            }
        }),
        Op::Sum(a) => accumulate(lo, nodes, *a, |ga| {
            for x in ga.iter_mut() {
                *x += g[0];
            }
        }),
        Op::TopKSoftmax { a, selected } => {
            let y = node.value.data();
            let m = node.value.shape()[1];
            accumulate(lo, nodes, *a, |ga| {
                for r in 0..y.len() / m {
                    let span = r * m..(r + 1) * m;
                    let dot: f64 = span.clone().map(|i| y[i] * g[i]).sum();
                    for i in span {
                        if selected[i] {
                            ga[i] += y[i] * (g[i] - dot);
                        }
                    }
                }
            });
        }
        Op::BceLogits { a, labels } => {
            let av = val(*a);
            accumulate(lo, nodes, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * (kernels::sigmoid(av[i]) - labels[i]);
                }
            });
        }
        Op::Huber { a, targets, delta } => {
            let av = val(*a);
            accumulate(lo, nodes, *a, |ga| {
                for i in 0..ga.len() {
                    let r = av[i] - targets[i];
                    ga[i] += g[i] * r.clamp(-delta, *delta);
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let v = tape.constant(t(&[2, 1], &[5.0, 7.0]));
        let y = tape.matmul(i, v).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[2], &[1000.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);

        let x = tape.constant(t(&[2], &[2.0, 1.0]));
        let y = tape.softmax(x).unwrap();
        let e = 1.0f64.exp();
        let expect = [e / (e + 1.0), 1.0 / (e + 1.0)];
        assert!((tape.value(y).data()[0] - expect[0]).abs() < 1e-12);
        assert!((tape.value(y).data()[0] - 0.731_059).abs() < 1e-6);
        assert!((tape.value(y).data()[1] - 0.268_941).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_empty_last_dim() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 0]));
        assert!(matches!(tape.softmax(x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::full(&[3], 1.0));
        let b = tape.constant(Tensor::zeros(&[3]));
        let x = tape.constant(t(&[1, 3], &[5.0, 5.0, 5.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);

        let g2 = tape.constant(Tensor::full(&[2], 1.0));
        let b2 = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(t(&[1, 2], &[-1.0, 1.0]));
        let y = tape.layer_norm(x, g2, b2, 1e-5).unwrap();
        // (x - 0) / sqrt(1 + 1e-5)
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let out = tape.value(y).data();
        assert!((out[0] + expect).abs() < 1e-15 && (out[1] - expect).abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_rejects_zero_width() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::zeros(&[0]));
        let b = tape.constant(Tensor::zeros(&[0]));
        let x = tape.constant(Tensor::zeros(&[2, 0]));
        assert!(tape.layer_norm(x, g, b, 1e-5).is_err());
    }

    #[test]
    fn activations_and_broadcast() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, -3.0, 1.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 1.0]);
        let g = tape.gelu(x);
        assert_eq!(tape.value(g).data()[0], 0.0);
        assert!((tape.value(g).data()[2] - 0.841_345).abs() < 1e-6);

        let col = tape.constant(t(&[2, 1], &[2.0, 3.0]));
        let mat = tape.constant(t(&[2, 3], &[1.0; 6]));
        let y = tape.mul(col, mat).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3]);
        assert_eq!(tape.value(y).data(), &[2.0, 2.0, 2.0, 3.0, 3.0, 3.0]);

        let bad = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(mat, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_linear_and_square() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[3], &[1.0, -2.0, 0.5]));
        let s = tape.sum(w);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(w).data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let w = tape.variable(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(w).data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn unreached_leaves_get_zero() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[2], &[1.0, 2.0]));
        let unused = tape.variable(t(&[2], &[3.0, 4.0]));
        let s = tape.sum(w);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0]);
        assert!(grads.get(unused).is_none());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.variable(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(w);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
        // Forward values survive the sweep.
        assert_eq!(tape.value(s).item().unwrap(), 3.0);
    }

    #[test]
    fn top_k_softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let y = tape.top_k_softmax(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x = tape.constant(t(&[1, 4], &[2.0, 1.0, 0.0, -1.0]));
        let y = tape.top_k_softmax(x, 2).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 0.731_059).abs() < 1e-6);
        assert!((out[1] - 0.268_941).abs() < 1e-6);
        assert_eq!(&out[2..], &[0.0, 0.0]);
    }

    #[test]
    fn gather_scatter_roundtrip_shapes() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let g = tape.gather_rows(x, &[2, 0]).unwrap();
        assert_eq!(tape.value(g).data(), &[5.0, 6.0, 1.0, 2.0]);
        let s = tape.scatter_rows(g, &[2, 0], 3).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
        let l = tape.sum(s);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn max_pool_routes_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1, 3, 2], &[1.0, 9.0, 4.0, 2.0, 3.0, 9.0]));
        let y = tape.max_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 9.0]);
        let l = tape.sum(y);
        let grads = tape.backward(l).unwrap();
        // Tie on channel 1 resolves to the first occurrence.
        assert_eq!(grads.wrt(x).data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
