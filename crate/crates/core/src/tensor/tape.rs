use std::sync::atomic::{AtomicUsize, Ordering};

use super::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Concat { parts: Vec<usize>, axis: usize },
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    ScatterAddRows { x: usize, idx: Vec<usize> },
    MulRows(usize, usize),
    ScaleRowsConst { x: usize, w: Vec<f64> },
    SegmentSoftmax { x: usize, seg: Vec<usize>, segments: usize },
    SegmentMax { x: usize, argmax: Vec<Option<usize>> },
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LeakyRelu(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log { x: usize, floor: f64 },
    Sum(usize),
    MeanAxis { x: usize, axis: usize },
    MaskedFill { x: usize, mask: Vec<bool> },
    PickPerRow { x: usize, idx: Vec<usize> },
    WeightedSum { x: usize, w: Vec<f64> },
    Reshape(usize),
    Transpose(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and the reverse index order is a valid topological order for backward.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, absent when `var` did not
    /// require a gradient or did not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.idx).and_then(Option::as_ref)
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n×m] += a[n×k] · b[m×k]ᵀ`
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * m + j] += s;
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(TensorError::ForeignVar(v.idx));
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Trainable input: receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        check_finite("leaf", &value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Frozen input: participates in the forward pass only.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.idx].value.shape()
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// `a[n×k] · b[k×m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let (n, k) = ta.require_rank2("matmul")?;
        let (k2, m) = tb.require_rank2("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        gemm_nn(ta.data(), tb.data(), &mut out, n, k, m);
        let value = Tensor::matrix(n, m, out)?;
        check_finite("matmul", &value)?;
        let rg = self.rg(&[ia, ib]);
        Ok(self.push(value, Op::MatMul(ia, ib), rg))
    }

    /// `a[n×k] · b[m×k]ᵀ`, the layout of a linear layer's weight.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        let (n, k) = ta.require_rank2("matmul_nt")?;
        let (m, k2) = tb.require_rank2("matmul_nt")?;
        if k != k2 {
            return Err(mismatch("matmul_nt", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        gemm_nt(ta.data(), tb.data(), &mut out, n, k, m);
        let value = Tensor::matrix(n, m, out)?;
        check_finite("matmul_nt", &value)?;
        let rg = self.rg(&[ia, ib]);
        Ok(self.push(value, Op::MatMulNT(ia, ib), rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        check_finite(name, &value)?;
        let rg = self.rg(&[ia, ib]);
        Ok(self.push(value, op(ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Adds the `m`-vector `b` to every row of the `n×m` matrix `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(b)?);
        let (tx, tb) = (self.val(ix), self.val(ib));
        let (n, m) = tx.require_rank2("add_row")?;
        if tb.numel() != m {
            return Err(mismatch("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for r in 0..n {
            for (o, bv) in data[r * m..(r + 1) * m].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let value = Tensor::matrix(n, m, data)?;
        check_finite("add_row", &value)?;
        let rg = self.rg(&[ix, ib]);
        Ok(self.push(value, Op::AddRow(ix, ib), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect())?;
        check_finite("scale", &value)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::Scale(ix, s), rg))
    }

    /// Concatenates along `axis` (0 for any rank, 1 for matrices).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let Some(&first) = ids.first() else {
            return Err(TensorError::BadLength {
                shape: vec![],
                len: 0,
            });
        };
        let base = self.val(first).shape().to_vec();
        let value = match axis {
            0 => {
                let mut rows = 0;
                let mut data = Vec::new();
                for &i in &ids {
                    let t = self.val(i);
                    if t.rank() != base.len() || t.shape()[1..] != base[1..] {
                        return Err(mismatch("concat", self.val(first), t));
                    }
                    rows += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                let mut shape = base.clone();
                shape[0] = rows;
                Tensor::new(shape, data)?
            }
            1 => {
                let n = self.val(first).require_rank2("concat")?.0;
                let mut widths = Vec::with_capacity(ids.len());
                for &i in &ids {
                    let t = self.val(i);
                    let (r, c) = t.require_rank2("concat")?;
                    if r != n {
                        return Err(mismatch("concat", self.val(first), t));
                    }
                    widths.push(c);
                }
                let m: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(n * m);
                for r in 0..n {
                    for &i in &ids {
                        data.extend_from_slice(self.val(i).row(r));
                    }
                }
                Tensor::matrix(n, m, data)?
            }
            _ => {
                return Err(TensorError::Rank {
                    op: "concat",
                    expected: axis + 1,
                    shape: base,
                })
            }
        };
        let rg = self.rg(&ids);
        Ok(self.push(value, Op::Concat { parts: ids, axis }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("slice_rows")?;
        if start + len > n || len == 0 {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                extent: n,
            });
        }
        let value = Tensor::matrix(len, m, t.data()[start * m..(start + len) * m].to_vec())?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::SliceRows { x: ix, start }, rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("slice_cols")?;
        if start + len > m || len == 0 {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                extent: m,
            });
        }
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let value = Tensor::matrix(n, len, data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::SliceCols { x: ix, start }, rg))
    }

    /// Row `r` of the output is row `idx[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("gather_rows")?;
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            if i >= n {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    extent: n,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(idx.len(), m, data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(
            value,
            Op::GatherRows {
                x: ix,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Sums row `r` of `x` into output row `idx[r]`; untouched rows are zero.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("scatter_add_rows")?;
        if idx.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                left: t.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let mut data = vec![0.0; rows * m];
        for (r, &dst) in idx.iter().enumerate() {
            if dst >= rows {
                return Err(TensorError::Index {
                    op: "scatter_add_rows",
                    index: dst,
                    extent: rows,
                });
            }
            for (o, v) in data[dst * m..(dst + 1) * m].iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        let value = Tensor::matrix(rows, m, data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(
            value,
            Op::ScatterAddRows {
                x: ix,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Multiplies row `i` of `x[n×m]` by `w[i]`, where `w` holds `n` values.
    pub fn mul_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let (tx, tw) = (self.val(ix), self.val(iw));
        let (n, m) = tx.require_rank2("mul_rows")?;
        if tw.numel() != n {
            return Err(mismatch("mul_rows", tx, tw));
        }
        let mut data = tx.data().to_vec();
        for (r, wv) in tw.data().iter().enumerate() {
            data[r * m..(r + 1) * m].iter_mut().for_each(|v| *v *= wv);
        }
        let value = Tensor::matrix(n, m, data)?;
        let rg = self.rg(&[ix, iw]);
        Ok(self.push(value, Op::MulRows(ix, iw), rg))
    }

    /// Multiplies row `i` of `x` by the constant `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("scale_rows")?;
        if w.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: t.shape().to_vec(),
                right: vec![w.len()],
            });
        }
        let mut data = t.data().to_vec();
        for (r, wv) in w.iter().enumerate() {
            data[r * m..(r + 1) * m].iter_mut().for_each(|v| *v *= wv);
        }
        let value = Tensor::matrix(n, m, data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(
            value,
            Op::ScaleRowsConst {
                x: ix,
                w: w.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax over groups of entries sharing a segment id.
    ///
    /// `x` holds one value per entry (any shape with `seg.len()` elements).
    pub fn segment_softmax(&mut self, x: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        if t.numel() != seg.len() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: t.shape().to_vec(),
                right: vec![seg.len()],
            });
        }
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (v, &s) in t.data().iter().zip(seg) {
            if s >= segments {
                return Err(TensorError::Index {
                    op: "segment_softmax",
                    index: s,
                    extent: segments,
                });
            }
            max[s] = max[s].max(*v);
        }
        let mut data: Vec<f64> = t.data().iter().zip(seg).map(|(v, &s)| (v - max[s]).exp()).collect();
        let mut denom = vec![0.0; segments];
        for (v, &s) in data.iter().zip(seg) {
            denom[s] += v;
        }
        for (v, &s) in data.iter_mut().zip(seg) {
            *v /= denom[s];
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                x: ix,
                seg: seg.to_vec(),
                segments,
            },
            rg,
        ))
    }

    /// Column-wise maximum of the rows of `x[n×m]` sharing a segment id.
    /// Segments with no rows produce zero rows.
    pub fn segment_max(&mut self, x: Var, seg: &[usize], segments: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("segment_max")?;
        if seg.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "segment_max",
                left: t.shape().to_vec(),
                right: vec![seg.len()],
            });
        }
        let mut argmax: Vec<Option<usize>> = vec![None; segments * m];
        for (r, &s) in seg.iter().enumerate() {
            if s >= segments {
                return Err(TensorError::Index {
                    op: "segment_max",
                    index: s,
                    extent: segments,
                });
            }
            for c in 0..m {
                let slot = &mut argmax[s * m + c];
                match slot {
                    Some(best) if t.at(*best, c) >= t.at(r, c) => {}
                    _ => *slot = Some(r),
                }
            }
        }
        let data = argmax
            .iter()
            .enumerate()
            .map(|(k, a)| a.map_or(0.0, |r| t.at(r, k % m)))
            .collect();
        let value = Tensor::matrix(segments, m, data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::SegmentMax { x: ix, argmax }, rg))
    }

    /// Numerically stable softmax along each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = (t.rows(), t.cols());
        let mut data = t.data().to_vec();
        for r in 0..n {
            let row = &mut data[r * m..(r + 1) * m];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::SoftmaxRows(ix), rg))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = (t.rows(), t.cols());
        let mut data = t.data().to_vec();
        for r in 0..n {
            let row = &mut data[r * m..(r + 1) * m];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::LogSoftmaxRows(ix), rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op, name: &'static str) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| f(*v)).collect())?;
        check_finite(name, &value)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, op(ix), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map(x, |v| if v > 0.0 { v } else { slope * v }, |i| Op::LeakyRelu(i, slope), "leaky_relu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, |v| v.max(0.0), Op::Relu, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, sigmoid, Op::Sigmoid, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::tanh, Op::Tanh, "tanh")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::exp, Op::Exp, "exp")
    }

    /// Natural log with the argument clamped to at least `1e-300`.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        const FLOOR: f64 = 1e-300;
        self.map(x, |v| v.max(FLOOR).ln(), |i| Op::Log { x: i, floor: FLOOR }, "log")
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let value = Tensor::scalar(self.val(ix).sum());
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::Sum(ix), rg))
    }

    /// Mean of a matrix over rows (`axis = 0`, giving `1×m`) or columns
    /// (`axis = 1`, giving `n×1`).
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("mean_axis")?;
        let value = match axis {
            0 => {
                let mut d = vec![0.0; m];
                for r in 0..n {
                    d.iter_mut().zip(t.row(r)).for_each(|(o, v)| *o += v);
                }
                d.iter_mut().for_each(|v| *v /= n as f64);
                Tensor::matrix(1, m, d)?
            }
            1 => Tensor::matrix(n, 1, (0..n).map(|r| t.row(r).iter().sum::<f64>() / m as f64).collect())?,
            _ => {
                return Err(TensorError::Rank {
                    op: "mean_axis",
                    expected: axis + 1,
                    shape: t.shape().to_vec(),
                })
            }
        };
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::MeanAxis { x: ix, axis }, rg))
    }

    /// Replaces entries where `mask` is true by `fill`.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        if mask.len() != t.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_fill",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = t
            .data()
            .iter()
            .zip(mask)
            .map(|(v, &m)| if m { fill } else { *v })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        check_finite("masked_fill", &value)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(
            value,
            Op::MaskedFill {
                x: ix,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Picks column `idx[r]` from each row `r`, giving `n×1`.
    pub fn pick_per_row(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("pick_per_row")?;
        if idx.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "pick_per_row",
                left: t.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(n);
        for (r, &c) in idx.iter().enumerate() {
            if c >= m {
                return Err(TensorError::Index {
                    op: "pick_per_row",
                    index: c,
                    extent: m,
                });
            }
            data.push(t.at(r, c));
        }
        let value = Tensor::matrix(n, 1, data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(
            value,
            Op::PickPerRow {
                x: ix,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// `Σ w_i · x_i` with constant weights, as a one-element tensor.
    pub fn weighted_sum(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        if w.len() != t.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                left: t.shape().to_vec(),
                right: vec![w.len()],
            });
        }
        let value = Tensor::scalar(t.data().iter().zip(w).map(|(a, b)| a * b).sum());
        let rg = self.rg(&[ix]);
        Ok(self.push(
            value,
            Op::WeightedSum {
                x: ix,
                w: w.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.check(x)?;
        let value = Tensor::new(shape.to_vec(), self.val(ix).data().to_vec())?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::Reshape(ix), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.check(x)?;
        let t = self.val(ix);
        let (n, m) = t.require_rank2("transpose")?;
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                data[c * n + r] = t.at(r, c);
            }
        }
        let value = Tensor::matrix(m, n, data)?;
        let rg = self.rg(&[ix]);
        Ok(self.push(value, Op::Transpose(ix), rg))
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Consumes the tape: a second call is rejected. When nothing on the tape
    /// requires a gradient the result is empty.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let il = self.check(loss)?;
        if self.nodes[il].value.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.nodes[il].value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[il].requires_grad {
            grads[il] = Some(vec![1.0]);
        }
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let out = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let wants = |j: usize| self.nodes[j].requires_grad;
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            let n = self.nodes[j].value.numel();
            let slot = grads[j].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                if wants(*a) {
                    acc(*a, &mut |s| gemm_nt(g, tb.data(), s, n, m, k));
                }
                if wants(*b) {
                    acc(*b, &mut |s| gemm_tn(ta.data(), g, s, n, k, m));
                }
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.rows());
                if wants(*a) {
                    acc(*a, &mut |s| gemm_nn(g, tb.data(), s, n, m, k));
                }
                if wants(*b) {
                    acc(*b, &mut |s| gemm_tn(g, ta.data(), s, n, m, k));
                }
            }
            Op::Add(a, b) => {
                for j in [*a, *b] {
                    if wants(j) {
                        acc(j, &mut |s| s.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                }
                if wants(*b) {
                    acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                if wants(*a) {
                    acc(*a, &mut |s| {
                        for ((o, gv), bv) in s.iter_mut().zip(g).zip(tb.data()) {
                            *o += gv * bv;
                        }
                    });
                }
                if wants(*b) {
                    acc(*b, &mut |s| {
                        for ((o, gv), av) in s.iter_mut().zip(g).zip(ta.data()) {
                            *o += gv * av;
                        }
                    });
                }
            }
            Op::AddRow(x, b) => {
                if wants(*x) {
                    acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                }
                if wants(*b) {
                    let m = out.cols();
                    acc(*b, &mut |s| {
                        for (k, v) in g.iter().enumerate() {
                            s[k % m] += v;
                        }
                    });
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(o, v)| *o += c * v));
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.val(p).numel();
                        if wants(p) {
                            acc(p, &mut |s| s.iter_mut().zip(&g[off..off + len]).for_each(|(o, v)| *o += v));
                        }
                        off += len;
                    }
                } else {
                    let m = out.cols();
                    let mut col = 0;
                    for &p in parts {
                        let w = self.val(p).cols();
                        if wants(p) {
                            acc(p, &mut |s| {
                                for r in 0..out.rows() {
                                    for c in 0..w {
                                        s[r * w + c] += g[r * m + col + c];
                                    }
                                }
                            });
                        }
                        col += w;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if wants(*x) {
                    let m = out.cols();
                    acc(*x, &mut |s| {
                        s[start * m..start * m + g.len()].iter_mut().zip(g).for_each(|(o, v)| *o += v)
                    });
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let (len, m) = (out.cols(), self.val(*x).cols());
                    acc(*x, &mut |s| {
                        for r in 0..out.rows() {
                            for c in 0..len {
                                s[r * m + start + c] += g[r * len + c];
                            }
                        }
                    });
                }
            }
            Op::GatherRows { x, idx } => {
                if wants(*x) {
                    let m = out.cols();
                    acc(*x, &mut |s| {
                        for (r, &src) in idx.iter().enumerate() {
                            for c in 0..m {
                                s[src * m + c] += g[r * m + c];
                            }
                        }
                    });
                }
            }
            Op::ScatterAddRows { x, idx } => {
                if wants(*x) {
                    let m = out.cols();
                    acc(*x, &mut |s| {
                        for (r, &dst) in idx.iter().enumerate() {
                            for c in 0..m {
                                s[r * m + c] += g[dst * m + c];
                            }
                        }
                    });
                }
            }
            Op::MulRows(x, w) => {
                let (tx, tw) = (self.val(*x), self.val(*w));
                let m = tx.cols();
                if wants(*x) {
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            *o += g[k] * tw.data()[k / m];
                        }
                    });
                }
                if wants(*w) {
                    acc(*w, &mut |s| {
                        for (k, gv) in g.iter().enumerate() {
                            s[k / m] += gv * tx.data()[k];
                        }
                    });
                }
            }
            Op::ScaleRowsConst { x, w } => {
                if wants(*x) {
                    let m = out.cols();
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            *o += g[k] * w[k / m];
                        }
                    });
                }
            }
            Op::SegmentSoftmax { x, seg, segments } => {
                if wants(*x) {
                    let y = out.data();
                    let mut dot = vec![0.0; *segments];
                    for ((gv, yv), &s) in g.iter().zip(y).zip(seg) {
                        dot[s] += gv * yv;
                    }
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            *o += y[k] * (g[k] - dot[seg[k]]);
                        }
                    });
                }
            }
            Op::SegmentMax { x, argmax } => {
                if wants(*x) {
                    let m = out.cols();
                    acc(*x, &mut |s| {
                        for (k, a) in argmax.iter().enumerate() {
                            if let Some(r) = a {
                                s[r * m + k % m] += g[k];
                            }
                        }
                    });
                }
            }
            Op::SoftmaxRows(x) => {
                if wants(*x) {
                    let m = out.cols();
                    let y = out.data();
                    acc(*x, &mut |s| {
                        for r in 0..out.rows() {
                            let range = r * m..(r + 1) * m;
                            let dot: f64 = g[range.clone()].iter().zip(&y[range.clone()]).map(|(a, b)| a * b).sum();
                            for k in range {
                                s[k] += y[k] * (g[k] - dot);
                            }
                        }
                    });
                }
            }
            Op::LogSoftmaxRows(x) => {
                if wants(*x) {
                    let m = out.cols();
                    let y = out.data();
                    acc(*x, &mut |s| {
                        for r in 0..out.rows() {
                            let range = r * m..(r + 1) * m;
                            let gs: f64 = g[range.clone()].iter().sum();
                            for k in range {
                                s[k] += g[k] - y[k].exp() * gs;
                            }
                        }
                    });
                }
            }
            Op::LeakyRelu(x, slope) => {
                if wants(*x) {
                    let xv = self.val(*x).data();
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            *o += if xv[k] > 0.0 { g[k] } else { slope * g[k] };
                        }
                    });
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xv = self.val(*x).data();
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            if xv[k] > 0.0 {
                                *o += g[k];
                            }
                        }
                    });
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let y = out.data();
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            *o += g[k] * y[k] * (1.0 - y[k]);
                        }
                    });
                }
            }
            Op::Tanh(x) => {
                if wants(*x) {
                    let y = out.data();
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            *o += g[k] * (1.0 - y[k] * y[k]);
                        }
                    });
                }
            }
            Op::Exp(x) => {
                if wants(*x) {
                    let y = out.data();
                    acc(*x, &mut |s| s.iter_mut().zip(g).zip(y).for_each(|((o, gv), yv)| *o += gv * yv));
                }
            }
            Op::Log { x, floor } => {
                if wants(*x) {
                    let xv = self.val(*x).data();
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            if xv[k] > *floor {
                                *o += g[k] / xv[k];
                            }
                        }
                    });
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    acc(*x, &mut |s| s.iter_mut().for_each(|o| *o += g[0]));
                }
            }
            Op::MeanAxis { x, axis } => {
                if wants(*x) {
                    let t = self.val(*x);
                    let (n, m) = (t.rows(), t.cols());
                    acc(*x, &mut |s| {
                        for r in 0..n {
                            for c in 0..m {
                                s[r * m + c] += if *axis == 0 { g[c] / n as f64 } else { g[r] / m as f64 };
                            }
                        }
                    });
                }
            }
            Op::MaskedFill { x, mask } => {
                if wants(*x) {
                    acc(*x, &mut |s| {
                        for (k, o) in s.iter_mut().enumerate() {
                            if !mask[k] {
                                *o += g[k];
                            }
                        }
                    });
                }
            }
            Op::PickPerRow { x, idx } => {
                if wants(*x) {
                    let m = self.val(*x).cols();
                    acc(*x, &mut |s| {
                        for (r, &c) in idx.iter().enumerate() {
                            s[r * m + c] += g[r];
                        }
                    });
                }
            }
            Op::WeightedSum { x, w } => {
                if wants(*x) {
                    acc(*x, &mut |s| s.iter_mut().zip(w).for_each(|(o, wv)| *o += g[0] * wv));
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let (n, m) = (out.rows(), out.cols());
                    acc(*x, &mut |s| {
                        for r in 0..n {
                            for c in 0..m {
                                s[c * n + r] += g[r * m + c];
                            }
                        }
                    });
                }
            }
        }
    }
}
