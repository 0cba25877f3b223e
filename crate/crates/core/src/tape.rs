//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output and whatever the
//! backward rule needs. Nodes only ever reference earlier nodes, so a single
//! reverse sweep in [`Tape::backward`] visits them in a valid order.
//! Parameters are borrowed rather than copied; a tape lives for one batch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Slot<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Slot<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Slot::Owned(t) => t,
            Slot::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` has the same shape as `a`, or is a row broadcast over `a`'s rows.
    Add { a: Var, b: Var, broadcast: bool },
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    MaskedMean { x: Var, mask: Vec<bool>, count: usize },
    Log(Var),
    Exp(Var),
    ClampMin { x: Var, floor: f64 },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Transpose(Var),
    Gather { x: Var, index: Vec<usize> },
    Sum(Var),
}

struct Node<'p> {
    value: Slot<'p>,
    op: Op,
    needs_grad: bool,
}

/// Layer-norm stabilizer added to the variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Slot::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf: gradients are reported for it.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Slot::Borrowed(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A borrowed leaf that never receives a gradient (inference).
    pub fn constant_ref(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Slot::Borrowed(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An owned leaf that receives a gradient (used for input sensitivities).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("[{n}, {k}] x [{k2}, {m}]"),
            ));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let t = Tensor::matrix(n, m, out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::MatMul(a, b), ng))
    }

    /// Elementwise sum. `b` may also be a single row (`[m]` or `[1, m]`)
    /// broadcast over every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        let broadcast = if ta.same_shape(tb) {
            false
        } else {
            let (_, m) = ta.dims2()?;
            let (rb, mb) = tb.dims2()?;
            if rb != 1 || mb != m {
                return Err(Error::dim(
                    "add",
                    format!("{:?} + {:?}", ta.shape(), tb.shape()),
                ));
            }
            true
        };
        let mut out = ta.clone();
        if broadcast {
            let m = tb.len();
            for row in out.data_mut().chunks_mut(m) {
                for (o, v) in row.iter_mut().zip(tb.data()) {
                    *o += v;
                }
            }
        } else {
            out.add_assign(tb);
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add { a, b, broadcast }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        if !ta.same_shape(tb) {
            return Err(Error::dim(
                "sub",
                format!("{:?} - {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        if !ta.same_shape(tb) {
            return Err(Error::dim(
                "mul",
                format!("{:?} * {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::Affine { x, scale }, ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// Row-wise softmax over the last axis. Where `mask[j]` is false the
    /// pre-activation of column `j` is replaced by −∞ in every row, so that
    /// column receives weight exactly zero and contributes no gradient.
    pub fn softmax_with_mask(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2()?;
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(Error::dim(
                    "softmax_with_mask",
                    format!("mask of length {} for {} columns", m.len(), cols),
                ));
            }
        }
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let src = &tx.data()[r * cols..(r + 1) * cols];
            let dst = &mut out[r * cols..(r + 1) * cols];
            let keep = |j: usize| mask.map_or(true, |m| m[j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in src.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::AllMasked { row: r });
            }
            let mut total = 0.0;
            for (j, &v) in src.iter().enumerate() {
                if keep(j) {
                    let e = libm::exp(v - max);
                    dst[j] = e;
                    total += e;
                }
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Normalizes each row of `x` to zero mean and unit variance, then applies
    /// the learned `gain` and `bias` (both of width equal to the last axis).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.layer_norm_with_eps(x, gain, bias, LAYER_NORM_EPS)
    }

    pub fn layer_norm_with_eps(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2()?;
        let tg = self.value(gain);
        let tb = self.value(bias);
        if tg.len() != cols || tb.len() != cols {
            return Err(Error::dim(
                "layer_norm",
                format!("gain/bias width {}/{} for {} columns", tg.len(), tb.len(), cols),
            ));
        }
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let src = &tx.data()[r * cols..(r + 1) * cols];
            let mean = src.iter().sum::<f64>() / cols as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = is;
            for j in 0..cols {
                let h = (src[j] - mean) * is;
                xhat[r * cols + j] = h;
                out[r * cols + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// Mean of the rows whose mask bit is set; returns a `[1, cols]` row.
    pub fn mean_over_masked_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2()?;
        if mask.len() != rows {
            return Err(Error::dim(
                "mean_over_masked_rows",
                format!("mask of length {} for {} rows", mask.len(), rows),
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyPool);
        }
        let mut out = vec![0.0; cols];
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for (o, v) in out.iter_mut().zip(tx.row_slice(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= count as f64;
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::row(out),
            Op::MaskedMean {
                x,
                mask: mask.to_vec(),
                count,
            },
            ng,
        ))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| libm::log(v)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::Log(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| libm::exp(v)).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::Exp(x), ng)
    }

    /// `max(x, floor)`; the gradient is cut where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| if v > floor { v } else { floor }).collect();
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::ClampMin { x, floor }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let (rows, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("{r} rows vs {rows}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let (_, cols) = self.value(*first).dims2()?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::dim("concat_rows", format!("{c} cols vs {cols}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, out)?,
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2()?;
        if start >= end || end > cols {
            return Err(Error::dim(
                "slice_cols",
                format!("range {start}..{end} of {cols} columns"),
            ));
        }
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&tx.row_slice(r)[start..end]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::matrix(rows, end - start, out)?,
            Op::SliceCols { x, start },
            ng,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2()?;
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = tx.data()[r * cols + c];
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::matrix(cols, rows, out)?, Op::Transpose(x), ng))
    }

    /// Picks entries by flat (row-major) index into a vector.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.len()) {
            return Err(Error::dim(
                "gather",
                format!("index {bad} out of {} entries", tx.len()),
            ));
        }
        let out = index.iter().map(|&i| tx.data()[i]).collect();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::vector(out),
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Propagates d(loss)/d(node) back through the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.get().shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.nodes[idx].value.get();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (n, k) = ta.dims2().expect("checked in forward");
                let (_, m) = tb.dims2().expect("checked in forward");
                if self.ng(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let grow = &g.data()[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &tb.data()[p * m..(p + 1) * m];
                            let mut s = 0.0;
                            for (x, y) in grow.iter().zip(brow) {
                                s += x * y;
                            }
                            da[i * k + p] = s;
                        }
                    }
                    self.accumulate(grads, *a, with_shape(ta, da));
                }
                if self.ng(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &g.data()[i * m..(i + 1) * m];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * m..(p + 1) * m];
                            for (d, x) in drow.iter_mut().zip(grow) {
                                *d += av * x;
                            }
                        }
                    }
                    self.accumulate(grads, *b, with_shape(tb, db));
                }
            }
            Op::Add { a, b, broadcast } => {
                self.accumulate(grads, *a, with_shape(self.value(*a), g.data().to_vec()));
                if self.ng(*b) {
                    let tb = self.value(*b);
                    let db = if *broadcast {
                        let m = tb.len();
                        let mut acc = vec![0.0; m];
                        for row in g.data().chunks(m) {
                            for (s, v) in acc.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        acc
                    } else {
                        g.data().to_vec()
                    };
                    self.accumulate(grads, *b, with_shape(tb, db));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*b) {
                    let neg = g.data().iter().map(|v| -v).collect();
                    self.accumulate(grads, *b, with_shape(g, neg));
                }
            }
            Op::Mul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                if self.ng(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, with_shape(ta, d));
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, with_shape(tb, d));
                }
            }
            Op::Affine { x, scale } => {
                let d = g.data().iter().map(|v| v * scale).collect();
                self.accumulate(grads, *x, with_shape(g, d));
            }
            Op::Softmax(x) => {
                let (rows, cols) = out.dims2().expect("checked in forward");
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let y = &out.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[r * cols + j] = y[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, with_shape(out, d));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = out.dims2().expect("checked in forward");
                let tg = self.value(*gain);
                if self.ng(*x) {
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let gr = &g.data()[r * cols..(r + 1) * cols];
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..cols {
                            let dh = gr[j] * tg.data()[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        let n = cols as f64;
                        for j in 0..cols {
                            let dh = gr[j] * tg.data()[j];
                            dx[r * cols + j] =
                                inv_std[r] / n * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, with_shape(out, dx));
                }
                if self.ng(*gain) || self.ng(*bias) {
                    let mut dg = vec![0.0; cols];
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for j in 0..cols {
                            let gv = g.data()[r * cols + j];
                            dg[j] += gv * xhat[r * cols + j];
                            db[j] += gv;
                        }
                    }
                    self.accumulate(grads, *gain, with_shape(tg, dg));
                    self.accumulate(grads, *bias, with_shape(self.value(*bias), db));
                }
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, &v)| if v > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, with_shape(tx, d));
            }
            Op::MaskedMean { x, mask, count } => {
                let tx = self.value(*x);
                let (rows, cols) = tx.dims2().expect("checked in forward");
                let mut d = vec![0.0; rows * cols];
                let inv = 1.0 / *count as f64;
                for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    for j in 0..cols {
                        d[r * cols + j] = g.data()[j] * inv;
                    }
                }
                self.accumulate(grads, *x, with_shape(tx, d));
            }
            Op::Log(x) => {
                let tx = self.value(*x);
                let d = g.data().iter().zip(tx.data()).map(|(gv, v)| gv / v).collect();
                self.accumulate(grads, *x, with_shape(tx, d));
            }
            Op::Exp(x) => {
                let d = g.data().iter().zip(out.data()).map(|(gv, y)| gv * y).collect();
                self.accumulate(grads, *x, with_shape(out, d));
            }
            Op::ClampMin { x, floor } => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(gv, &v)| if v > *floor { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, with_shape(tx, d));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2().expect("checked in forward");
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let (_, c) = tp.dims2().expect("checked in forward");
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, p, with_shape(tp, d));
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let n = tp.len();
                    if self.ng(p) {
                        self.accumulate(grads, p, with_shape(tp, g.data()[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (rows, cols) = tx.dims2().expect("checked in forward");
                let (_, w) = out.dims2().expect("checked in forward");
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + w]
                        .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                self.accumulate(grads, *x, with_shape(tx, d));
            }
            Op::Transpose(x) => {
                let tx = self.value(*x);
                let (rows, cols) = tx.dims2().expect("checked in forward");
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] = g.data()[c * rows + r];
                    }
                }
                self.accumulate(grads, *x, with_shape(tx, d));
            }
            Op::Gather { x, index } => {
                let tx = self.value(*x);
                let mut d = vec![0.0; tx.len()];
                for (gv, &i) in g.data().iter().zip(index) {
                    d[i] += gv;
                }
                self.accumulate(grads, *x, with_shape(tx, d));
            }
            Op::Sum(x) => {
                let tx = self.value(*x);
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(tx.shape(), gv));
            }
        }
    }
}

fn with_shape(like: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("gradient matches its operand")
}

/// `out[n×m] = a[n×k] · b[k×m]`, accumulated in i-k-j order.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// d(loss)/d(v); all zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}
