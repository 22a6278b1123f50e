//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for the backward pass. Nodes only reference earlier nodes, so a reverse
//! sweep over the tape is a valid topological order.

use super::kernels::{self, c, ConvGeom, LstmCache, Padding};
use super::params::{ParamId, ParameterSet};
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<E> {
    Input,
    Param { set: u64, index: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, E),
    AddRow(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, col: Vec<E> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<E>, rstd: Vec<E> },
    Softmax { x: Var, tau: E },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Lstm { xproj: Var, whh: Var, hidden: usize, reverse: bool, cache: LstmCache<E> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<E> },
    Rope { x: Var, heads: usize, start: usize },
    InterpRows { x: Var, factor: usize },
    MeanRows(Var),
    Sum(Var),
    CeTemperature { logits: Var, targets: Vec<usize>, tau: E, probs: Vec<E> },
    Ctc { logits: Var, grad: Vec<E> },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

/// A recorded computation. Single writer; build a fresh graph per example.
pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
}

/// Gradients produced by [`Graph::backward`], kept for leaf nodes only.
pub struct Gradients<E> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&[E]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Constant or differentiable leaf.
    pub fn input(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Input, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a parameter; differentiable iff the parameter is trainable.
    pub fn param(&mut self, set: &ParameterSet<E>, id: ParamId) -> Var {
        let p = set.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param { set: set.uid(), index: id.0 },
            requires_grad: p.trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}x{k}] * [{k2}x{n}]")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), &[a, b]))
    }

    /// `x W + b` with `W [in x out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: E) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    /// Adds a bias row to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(b).numel() != n {
            return Err(Error::shape("add_row", format!("bias of {} for {n} columns", self.value(b).numel())));
        }
        let mut out = self.value(x).data().to_vec();
        kernels::add_row_inplace(&mut out, self.value(b).data());
        Ok(self.push(Tensor::matrix(m, n, out), Op::AddRow(x, b), &[x, b]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::gelu);
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    /// 1-D convolution of `x [T x C_in]` with `w [K x C_in x C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let (t_in, c_in) = self.dims(x);
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[1] != c_in {
            return Err(Error::shape("conv1d", format!("input [{t_in}x{c_in}] with kernel {ws:?}")));
        }
        let geom = ConvGeom::new(t_in, ws[0], stride, padding, c_in, ws[2])?;
        if let Some(b) = b {
            if self.value(b).numel() != ws[2] {
                return Err(Error::shape("conv1d", format!("bias of {} for {} outputs", self.value(b).numel(), ws[2])));
            }
        }
        let (y, col) = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(Tensor::matrix(geom.t_out, geom.c_out, y), Op::Conv1d { x, w, b, geom, col }, &inputs))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Error::shape("layer_norm", format!("affine params for {n} features")));
        }
        let (y, xhat, rstd) =
            kernels::layer_norm_forward(self.value(x).data(), self.value(gain).data(), self.value(bias).data());
        Ok(self.push(Tensor::matrix(m, n, y), Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Row-wise `softmax(x / tau)`.
    pub fn softmax(&mut self, x: Var, tau: E) -> Result<Var> {
        if tau <= E::zero() {
            return Err(Error::param("tau", format!("temperature must be positive, got {tau}")));
        }
        let (m, n) = self.dims(x);
        let y = kernels::softmax_rows(self.value(x).data(), n, tau);
        let shape = self.value(x).shape().to_vec();
        let _ = m;
        Ok(self.push(Tensor::new(shape, y)?, Op::Softmax { x, tau }, &[x]))
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.dims(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= n {
                return Err(Error::shape("gather", format!("id {i} out of range for {n} rows")));
            }
            out.extend_from_slice(self.value(table).row(i));
        }
        Ok(self.push(Tensor::matrix(ids.len(), d, out), Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = parts.first().map(|&p| self.dims(p).1).ok_or_else(|| Error::shape("concat_rows", "no parts"))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, cols) = self.dims(p);
            if cols != d {
                return Err(Error::shape("concat_rows", format!("width {cols} != {d}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::matrix(rows, d, out), Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.dims(p).0).ok_or_else(|| Error::shape("concat_cols", "no parts"))?;
        let mut total = 0;
        for &p in parts {
            let (r, cols) = self.dims(p);
            if r != rows {
                return Err(Error::shape("concat_cols", format!("rows {r} != {rows}")));
            }
            total += cols;
        }
        let mut out = vec![E::zero(); rows * total];
        let mut off = 0;
        for &p in parts {
            let cols = self.dims(p).1;
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + cols].copy_from_slice(&src[r * cols..(r + 1) * cols]);
            }
            off += cols;
        }
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start + len > m {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::matrix(len, n, out), Op::SliceRows { x, start }, &[x]))
    }

    /// LSTM over pre-projected inputs `xproj [T x 4H]`, recurrent `whh [H x 4H]`.
    pub fn lstm(&mut self, xproj: Var, whh: Var, reverse: bool) -> Result<Var> {
        let (t_len, h4) = self.dims(xproj);
        let (hidden, h4w) = self.dims(whh);
        if h4 != 4 * hidden || h4w != h4 {
            return Err(Error::shape("lstm", format!("xproj width {h4}, whh [{hidden}x{h4w}]")));
        }
        let cache = kernels::lstm_forward(self.value(xproj).data(), self.value(whh).data(), t_len, hidden, reverse);
        let value = Tensor::matrix(t_len, hidden, cache.hidden.clone());
        Ok(self.push(value, Op::Lstm { xproj, whh, hidden, reverse, cache }, &[xproj, whh]))
    }

    /// Multi-head attention over `[T x D]` projections.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (t_len, d) = self.dims(q);
        if self.dims(k) != (t_len, d) || self.dims(v) != (t_len, d) || heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("q [{t_len}x{d}], {heads} heads")));
        }
        let (out, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            t_len,
            d,
            heads,
            causal,
        );
        Ok(self.push(Tensor::matrix(t_len, d, out), Op::Attention { q, k, v, heads, probs }, &[q, k, v]))
    }

    /// Rotary position embedding; row `r` sits at absolute position `start + r`.
    pub fn rope(&mut self, x: Var, heads: usize, start: usize) -> Result<Var> {
        let (m, d) = self.dims(x);
        if heads == 0 || d % heads != 0 || (d / heads) % 2 != 0 {
            return Err(Error::shape("rope", format!("width {d} with {heads} heads needs even head size")));
        }
        let mut out = self.value(x).data().to_vec();
        kernels::rope_apply(&mut out, d, heads, start, false);
        Ok(self.push(Tensor::matrix(m, d, out), Op::Rope { x, heads, start }, &[x]))
    }

    /// Stretches the time axis by `factor` with linear interpolation.
    pub fn interp_rows(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if factor == 0 || m == 0 {
            return Err(Error::param("factor", "dilation factor and rows must be >= 1"));
        }
        let y = kernels::interp_rows_forward(self.value(x).data(), m, n, factor);
        Ok(self.push(Tensor::matrix(m * factor, n, y), Op::InterpRows { x, factor }, &[x]))
    }

    /// Column means, `[1 x cols]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if m == 0 {
            return Err(Error::Empty("mean over zero rows".into()));
        }
        let s = kernels::col_sums(self.value(x).data(), m, n);
        let inv = E::one() / c::<E>(m as f64);
        let out = s.into_iter().map(|v| v * inv).collect();
        Ok(self.push(Tensor::matrix(1, n, out), Op::MeanRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: E = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Summed temperature-scaled cross-entropy over rows of `logits`.
    pub fn ce_temperature(&mut self, logits: Var, targets: &[usize], tau: E) -> Result<Var> {
        if tau <= E::zero() {
            return Err(Error::param("tau", format!("temperature must be positive, got {tau}")));
        }
        let (m, v) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::shape("ce_temperature", format!("{m} logit rows for {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::param("target", format!("id {bad} out of range for {v} classes")));
        }
        let logp = kernels::log_softmax_rows(self.value(logits).data(), v, tau);
        let loss: E = targets.iter().enumerate().map(|(r, &t)| -logp[r * v + t]).sum();
        let probs = logp.into_iter().map(|l| l.exp()).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CeTemperature { logits, targets: targets.to_vec(), tau, probs },
            &[logits],
        ))
    }

    /// CTC negative log-likelihood of `target` under per-frame `logits`.
    pub fn ctc(&mut self, logits: Var, target: &[usize], blank: usize) -> Result<Var> {
        let (frames, classes) = self.dims(logits);
        if blank >= classes || target.iter().any(|&t| t >= classes || t == blank) {
            return Err(Error::param("target", "label ids must be in range and differ from blank"));
        }
        let logp = kernels::log_softmax_rows(self.value(logits).data(), classes, E::one());
        let (loss, grad) = kernels::ctc_forward_backward(&logp, frames, classes, target, blank)?;
        Ok(self.push(Tensor::scalar(loss), Op::Ctc { logits, grad }, &[logits]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<E>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![E::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Input | Op::Param { .. });
            if is_leaf {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<E>>], v: Var, g: Vec<E>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn accumulate_slice(&self, grads: &mut [Option<Vec<E>>], v: Var, offset: usize, g: &[E]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let acc = grads[v.0].get_or_insert_with(|| vec![E::zero(); n]);
        for (a, &b) in acc[offset..offset + g.len()].iter_mut().zip(g) {
            *a += b;
        }
    }

    fn backprop(&self, i: usize, g: &[E], grads: &mut [Option<Vec<E>>]) {
        let node = &self.nodes[i];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Input | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if rg(*a) {
                    let mut da = vec![E::zero(); m * k];
                    super::element::gemm(false, true, m, k, n, E::one(), g, n, self.value(*b).data(), n, E::zero(), &mut da, k);
                    self.accumulate(grads, *a, da);
                }
                if rg(*b) {
                    let mut db = vec![E::zero(); k * n];
                    super::element::gemm(true, false, k, n, m, E::one(), self.value(*a).data(), k, g, n, E::zero(), &mut db, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if rg(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                }
                if rg(*b) {
                    self.accumulate(grads, *b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.iter().map(|&x| x * *s).collect()),
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                if rg(*b) {
                    let (m, n) = self.dims(*x);
                    self.accumulate(grads, *b, kernels::col_sums(g, m, n));
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, g.iter().zip(xv).map(|(&gg, &v)| gg * kernels::gelu_grad(v)).collect());
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, g.iter().zip(y).map(|(&gg, &t)| gg * (E::one() - t * t)).collect());
            }
            Op::Conv1d { x, w, b, geom, col } => {
                let (dx, dw, db) = kernels::conv1d_backward(g, col, self.value(*w).data(), geom, rg(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (dx, dg, db) = kernels::layer_norm_backward(g, xhat, rstd, self.value(*gain).data());
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gain, dg);
                self.accumulate(grads, *bias, db);
            }
            Op::Softmax { x, tau } => {
                let n = self.dims(*x).1;
                self.accumulate(grads, *x, kernels::softmax_rows_backward(node.value.data(), g, n, *tau));
            }
            Op::Gather { table, ids } => {
                let d = self.dims(*table).1;
                for (r, &id) in ids.iter().enumerate() {
                    self.accumulate_slice(grads, *table, id * d, &g[r * d..(r + 1) * d]);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(grads, p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let cols = self.dims(p).1;
                    if rg(p) {
                        let mut dp = vec![E::zero(); rows * cols];
                        for r in 0..rows {
                            dp[r * cols..(r + 1) * cols].copy_from_slice(&g[r * total + off..r * total + off + cols]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    off += cols;
                }
            }
            Op::SliceRows { x, start } => {
                let n = self.dims(*x).1;
                self.accumulate_slice(grads, *x, start * n, g);
            }
            Op::Lstm { xproj, whh, hidden, reverse, cache } => {
                let t_len = self.dims(*xproj).0;
                let (dx, dw) = kernels::lstm_backward(g, cache, self.value(*whh).data(), t_len, *hidden, *reverse);
                self.accumulate(grads, *xproj, dx);
                self.accumulate(grads, *whh, dw);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (t_len, d) = self.dims(*q);
                let (dq, dk, dv) = kernels::attention_backward(
                    g,
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    t_len,
                    d,
                    *heads,
                );
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::Rope { x, heads, start } => {
                let d = self.dims(*x).1;
                let mut dx = g.to_vec();
                kernels::rope_apply(&mut dx, d, *heads, *start, true);
                self.accumulate(grads, *x, dx);
            }
            Op::InterpRows { x, factor } => {
                let (m, n) = self.dims(*x);
                self.accumulate(grads, *x, kernels::interp_rows_backward(g, m, n, *factor));
            }
            Op::MeanRows(x) => {
                let (m, n) = self.dims(*x);
                let inv = E::one() / c::<E>(m as f64);
                let mut dx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    dx.extend(g.iter().map(|&v| v * inv));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::CeTemperature { logits, targets, tau, probs } => {
                let v = self.dims(*logits).1;
                let scale = g[0] / *tau;
                let mut d: Vec<E> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * v + t] -= scale;
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Ctc { logits, grad } => {
                self.accumulate(grads, *logits, grad.iter().map(|&v| v * g[0]).collect());
            }
        }
    }

    /// Parameter bindings of leaf nodes: `(node, set uid, parameter index)`.
    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, u64, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param { set, index } => Some((Var(i), set, index)),
            _ => None,
        })
    }
}
