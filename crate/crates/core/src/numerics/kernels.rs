//! Slice-level forward/backward kernels shared by the autodiff graph and the
//! cached inference path.

use serde::{Deserialize, Serialize};

use super::element::{gemm, Element};
use crate::error::{Error, Result};

#[inline]
pub(crate) fn c<E: Element>(v: f64) -> E {
    E::from_f64_lossy(v)
}

/// `a [m x k] * b [k x n]`.
pub fn matmul<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    gemm(false, false, m, n, k, E::one(), a, k, b, n, E::zero(), &mut out, n);
    out
}

// ---------------------------------------------------------------- conv1d

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Zero padding on the left only; output length is `ceil(T / stride)` and
    /// the last window ends on the last input sample.
    SameLeft,
    None,
}

/// Resolved geometry of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub t_in: usize,
    pub t_out: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Input index of the first tap of window 0 (negative = zero padding).
    pub offset: isize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvGeom {
    pub fn new(
        t_in: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::shape("conv1d", format!("kernel {kernel} and stride {stride} must be >= 1")));
        }
        let (t_out, offset) = match padding {
            Padding::SameLeft => {
                if t_in == 0 {
                    return Err(Error::shape("conv1d", "empty input"));
                }
                let t_out = t_in.div_ceil(stride);
                let span = (t_out - 1) * stride + kernel;
                (t_out, t_in as isize - span as isize)
            }
            Padding::None => {
                if t_in < kernel {
                    return Err(Error::shape(
                        "conv1d",
                        format!("input length {t_in} shorter than kernel {kernel} without padding"),
                    ));
                }
                ((t_in - kernel) / stride + 1, 0)
            }
        };
        Ok(Self { t_in, t_out, kernel, stride, offset, c_in, c_out })
    }

    /// Closed-form output length for a given padding mode.
    pub fn output_len(t_in: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
        match padding {
            Padding::SameLeft => t_in.div_ceil(stride),
            Padding::None => {
                if t_in < kernel {
                    0
                } else {
                    (t_in - kernel) / stride + 1
                }
            }
        }
    }

    fn col_width(&self) -> usize {
        self.kernel * self.c_in
    }

    #[inline]
    fn src(&self, t: usize, k: usize) -> Option<usize> {
        let i = self.offset + (t * self.stride + k) as isize;
        (i >= 0 && (i as usize) < self.t_in).then_some(i as usize)
    }
}

pub fn im2col<E: Element>(x: &[E], g: &ConvGeom) -> Vec<E> {
    let w = g.col_width();
    let mut col = vec![E::zero(); g.t_out * w];
    for t in 0..g.t_out {
        for k in 0..g.kernel {
            if let Some(s) = g.src(t, k) {
                let dst = t * w + k * g.c_in;
                col[dst..dst + g.c_in].copy_from_slice(&x[s * g.c_in..(s + 1) * g.c_in]);
            }
        }
    }
    col
}

fn col2im_add<E: Element>(dcol: &[E], g: &ConvGeom, dx: &mut [E]) {
    let w = g.col_width();
    for t in 0..g.t_out {
        for k in 0..g.kernel {
            if let Some(s) = g.src(t, k) {
                let src = &dcol[t * w + k * g.c_in..t * w + (k + 1) * g.c_in];
                for (d, &v) in dx[s * g.c_in..(s + 1) * g.c_in].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
    }
}

/// Returns `(output [t_out x c_out], im2col buffer)`.
pub fn conv1d_forward<E: Element>(x: &[E], w: &[E], b: Option<&[E]>, g: &ConvGeom) -> (Vec<E>, Vec<E>) {
    let col = im2col(x, g);
    let mut y = matmul(&col, w, g.t_out, g.col_width(), g.c_out);
    if let Some(b) = b {
        add_row_inplace(&mut y, b);
    }
    (y, col)
}

/// Gradients `(dx, dw, db)` of a conv given the saved im2col buffer.
pub fn conv1d_backward<E: Element>(
    dy: &[E],
    col: &[E],
    w: &[E],
    g: &ConvGeom,
    need_dx: bool,
) -> (Option<Vec<E>>, Vec<E>, Vec<E>) {
    let cw = g.col_width();
    let mut dw = vec![E::zero(); cw * g.c_out];
    gemm(true, false, cw, g.c_out, g.t_out, E::one(), col, cw, dy, g.c_out, E::zero(), &mut dw, g.c_out);
    let db = col_sums(dy, g.t_out, g.c_out);
    let dx = need_dx.then(|| {
        let mut dcol = vec![E::zero(); g.t_out * cw];
        gemm(false, true, g.t_out, cw, g.c_out, E::one(), dy, g.c_out, w, g.c_out, E::zero(), &mut dcol, cw);
        let mut dx = vec![E::zero(); g.t_in * g.c_in];
        col2im_add(&dcol, g, &mut dx);
        dx
    });
    (dx, dw, db)
}

pub fn add_row_inplace<E: Element>(y: &mut [E], b: &[E]) {
    let n = b.len();
    for row in y.chunks_mut(n) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

pub fn col_sums<E: Element>(x: &[E], rows: usize, cols: usize) -> Vec<E> {
    let mut s = vec![E::zero(); cols];
    for r in 0..rows {
        for (acc, &v) in s.iter_mut().zip(&x[r * cols..(r + 1) * cols]) {
            *acc += v;
        }
    }
    s
}

// ---------------------------------------------------------------- activations

/// Exact GeLU, `x * Phi(x)`.
#[inline]
pub fn gelu<E: Element>(x: E) -> E {
    c::<E>(0.5) * x * (E::one() + (x * c::<E>(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub fn gelu_grad<E: Element>(x: E) -> E {
    let cdf = c::<E>(0.5) * (E::one() + (x * c::<E>(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * c::<E>(0.5)).exp() * c::<E>(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

#[inline]
pub fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

// ---------------------------------------------------------------- softmax

/// Row-wise `softmax(x / tau)` with max subtraction.
pub fn softmax_rows<E: Element>(x: &[E], cols: usize, tau: E) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for (row, o) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mx = row.iter().fold(E::neg_infinity(), |m, &v| m.max(v));
        let mut sum = E::zero();
        for (oo, &v) in o.iter_mut().zip(row) {
            *oo = ((v - mx) / tau).exp();
            sum += *oo;
        }
        for oo in o.iter_mut() {
            *oo /= sum;
        }
    }
    out
}

/// Row-wise `log softmax(x / tau)`.
pub fn log_softmax_rows<E: Element>(x: &[E], cols: usize, tau: E) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for (row, o) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mx = row.iter().fold(E::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| ((v - mx) / tau).exp()).sum::<E>().ln();
        for (oo, &v) in o.iter_mut().zip(row) {
            *oo = (v - mx) / tau - lse;
        }
    }
    out
}

/// Backward of row-wise softmax with temperature given its output `y`.
pub fn softmax_rows_backward<E: Element>(y: &[E], dy: &[E], cols: usize, tau: E) -> Vec<E> {
    let mut dx = vec![E::zero(); y.len()];
    for ((yr, dyr), dxr) in y.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let dot: E = yr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        for ((d, &yy), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yy * (g - dot) / tau;
        }
    }
    dx
}

pub fn log_sum_exp<E: Element>(a: E, b: E) -> E {
    if a == E::neg_infinity() {
        return b;
    }
    if b == E::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

// ---------------------------------------------------------------- layer norm

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Returns `(y, xhat, rstd)`.
pub fn layer_norm_forward<E: Element>(x: &[E], gain: &[E], bias: &[E]) -> (Vec<E>, Vec<E>, Vec<E>) {
    let cols = gain.len();
    let rows = x.len() / cols;
    let n = c::<E>(cols as f64);
    let mut y = vec![E::zero(); x.len()];
    let mut xhat = vec![E::zero(); x.len()];
    let mut rstd = vec![E::zero(); rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().sum::<E>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() / n;
        let rs = E::one() / (var + c::<E>(LAYER_NORM_EPS)).sqrt();
        rstd[r] = rs;
        for j in 0..cols {
            let h = (row[j] - mean) * rs;
            xhat[r * cols + j] = h;
            y[r * cols + j] = h * gain[j] + bias[j];
        }
    }
    (y, xhat, rstd)
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<E: Element>(
    dy: &[E],
    xhat: &[E],
    rstd: &[E],
    gain: &[E],
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let cols = gain.len();
    let rows = rstd.len();
    let n = c::<E>(cols as f64);
    let mut dx = vec![E::zero(); dy.len()];
    let mut dg = vec![E::zero(); cols];
    let mut db = vec![E::zero(); cols];
    let mut dh = vec![E::zero(); cols];
    for r in 0..rows {
        let off = r * cols;
        let mut sum_dh = E::zero();
        let mut sum_dh_h = E::zero();
        for j in 0..cols {
            let g = dy[off + j];
            dg[j] += g * xhat[off + j];
            db[j] += g;
            dh[j] = g * gain[j];
            sum_dh += dh[j];
            sum_dh_h += dh[j] * xhat[off + j];
        }
        for j in 0..cols {
            dx[off + j] = rstd[r] * (dh[j] - sum_dh / n - xhat[off + j] * sum_dh_h / n);
        }
    }
    (dx, dg, db)
}

// ---------------------------------------------------------------- LSTM

/// Saved activations of a full LSTM sequence pass.
#[derive(Clone, Debug)]
pub struct LstmCache<E> {
    /// Activated gates per step, `[T x 4H]` in (i, f, g, o) order.
    pub gates: Vec<E>,
    /// Cell states `[T x H]`.
    pub cells: Vec<E>,
    /// Hidden states `[T x H]` (also the op output).
    pub hidden: Vec<E>,
}

/// Runs an LSTM over pre-projected inputs `xproj [T x 4H]` (input weights
/// and bias already applied) with recurrent weights `whh [H x 4H]`.
/// Zero initial state. `reverse` processes time backwards; outputs stay in
/// input time order.
pub fn lstm_forward<E: Element>(xproj: &[E], whh: &[E], t_len: usize, hidden: usize, reverse: bool) -> LstmCache<E> {
    let h4 = 4 * hidden;
    let mut gates = vec![E::zero(); t_len * h4];
    let mut cells = vec![E::zero(); t_len * hidden];
    let mut hs = vec![E::zero(); t_len * hidden];
    let mut prev: Option<usize> = None;
    let mut pre = vec![E::zero(); h4];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        pre.copy_from_slice(&xproj[t * h4..(t + 1) * h4]);
        if let Some(p) = prev {
            gemm(false, false, 1, h4, hidden, E::one(), &hs[p * hidden..(p + 1) * hidden], hidden, whh, h4, E::one(), &mut pre, h4);
        }
        for j in 0..hidden {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[hidden + j]);
            let g = pre[2 * hidden + j].tanh();
            let o = sigmoid(pre[3 * hidden + j]);
            let c_prev = prev.map_or(E::zero(), |p| cells[p * hidden + j]);
            let cc = f * c_prev + i * g;
            gates[t * h4 + j] = i;
            gates[t * h4 + hidden + j] = f;
            gates[t * h4 + 2 * hidden + j] = g;
            gates[t * h4 + 3 * hidden + j] = o;
            cells[t * hidden + j] = cc;
            hs[t * hidden + j] = o * cc.tanh();
        }
        prev = Some(t);
    }
    LstmCache { gates, cells, hidden: hs }
}

/// Backpropagation through time. Returns `(dxproj, dwhh)`.
pub fn lstm_backward<E: Element>(
    dy: &[E],
    cache: &LstmCache<E>,
    whh: &[E],
    t_len: usize,
    hidden: usize,
    reverse: bool,
) -> (Vec<E>, Vec<E>) {
    let h4 = 4 * hidden;
    let mut dxproj = vec![E::zero(); t_len * h4];
    let mut dwhh = vec![E::zero(); hidden * h4];
    let mut dh_next = vec![E::zero(); hidden];
    let mut dc_next = vec![E::zero(); hidden];
    for step in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - step } else { step };
        let prev = if step == 0 { None } else if reverse { Some(t + 1) } else { Some(t - 1) };
        let da = &mut dxproj[t * h4..(t + 1) * h4];
        for j in 0..hidden {
            let i = cache.gates[t * h4 + j];
            let f = cache.gates[t * h4 + hidden + j];
            let g = cache.gates[t * h4 + 2 * hidden + j];
            let o = cache.gates[t * h4 + 3 * hidden + j];
            let cc = cache.cells[t * hidden + j];
            let tc = cc.tanh();
            let dh = dy[t * hidden + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (E::one() - tc * tc) + dc_next[j];
            let c_prev = prev.map_or(E::zero(), |p| cache.cells[p * hidden + j]);
            let di = dc * g;
            let dg = dc * i;
            let df = dc * c_prev;
            dc_next[j] = dc * f;
            da[j] = di * i * (E::one() - i);
            da[hidden + j] = df * f * (E::one() - f);
            da[2 * hidden + j] = dg * (E::one() - g * g);
            da[3 * hidden + j] = d_o * o * (E::one() - o);
        }
        match prev {
            // dh_next = da whh^T
            Some(_) => gemm(false, true, 1, hidden, h4, E::one(), da, h4, whh, h4, E::zero(), &mut dh_next, hidden),
            None => dh_next.iter_mut().for_each(|v| *v = E::zero()),
        }
    }
    // dwhh = sum_t h_prev(t)^T da_t as one product over the shifted rows.
    if t_len > 1 {
        let n = t_len - 1;
        let (h, da) = if reverse {
            (&cache.hidden[hidden..], &dxproj[..n * h4])
        } else {
            (&cache.hidden[..n * hidden], &dxproj[h4..])
        };
        gemm(true, false, hidden, h4, n, E::one(), h, hidden, da, h4, E::zero(), &mut dwhh, h4);
    }
    (dxproj, dwhh)
}

// ---------------------------------------------------------------- attention

/// Multi-head scaled dot-product attention over `[T x D]` q/k/v.
/// Returns `(output [T x D], probabilities [heads x T x T])`.
pub fn attention_forward<E: Element>(
    q: &[E],
    k: &[E],
    v: &[E],
    t_len: usize,
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<E>, Vec<E>) {
    let dh = d / heads;
    let scale = c::<E>(1.0 / (dh as f64).sqrt());
    let mut probs = vec![E::zero(); heads * t_len * t_len];
    let mut out = vec![E::zero(); t_len * d];
    for h in 0..heads {
        let p = &mut probs[h * t_len * t_len..(h + 1) * t_len * t_len];
        gemm(false, true, t_len, t_len, dh, scale, &q[h * dh..], d, &k[h * dh..], d, E::zero(), p, t_len);
        if causal {
            for i in 0..t_len {
                for j in (i + 1)..t_len {
                    p[i * t_len + j] = E::neg_infinity();
                }
            }
        }
        let sm = softmax_rows(p, t_len, E::one());
        p.copy_from_slice(&sm);
        gemm(false, false, t_len, dh, t_len, E::one(), p, t_len, &v[h * dh..], d, E::zero(), &mut out[h * dh..], d);
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<E: Element>(
    dout: &[E],
    q: &[E],
    k: &[E],
    v: &[E],
    probs: &[E],
    t_len: usize,
    d: usize,
    heads: usize,
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let dh = d / heads;
    let scale = c::<E>(1.0 / (dh as f64).sqrt());
    let mut dq = vec![E::zero(); t_len * d];
    let mut dk = vec![E::zero(); t_len * d];
    let mut dv = vec![E::zero(); t_len * d];
    let mut dp = vec![E::zero(); t_len * t_len];
    for h in 0..heads {
        let p = &probs[h * t_len * t_len..(h + 1) * t_len * t_len];
        // dv_h = P^T dout_h
        gemm(true, false, t_len, dh, t_len, E::one(), p, t_len, &dout[h * dh..], d, E::zero(), &mut dv[h * dh..], d);
        // dP = dout_h v_h^T
        gemm(false, true, t_len, t_len, dh, E::one(), &dout[h * dh..], d, &v[h * dh..], d, E::zero(), &mut dp, t_len);
        let ds = softmax_rows_backward(p, &dp, t_len, E::one());
        gemm(false, false, t_len, dh, t_len, scale, &ds, t_len, &k[h * dh..], d, E::zero(), &mut dq[h * dh..], d);
        gemm(true, false, t_len, dh, t_len, scale, &ds, t_len, &q[h * dh..], d, E::zero(), &mut dk[h * dh..], d);
    }
    (dq, dk, dv)
}

// ---------------------------------------------------------------- rotary

pub const ROPE_BASE: f64 = 10_000.0;

/// Rotates interleaved pairs `(2i, 2i+1)` inside every head by
/// `pos * base^(-2i/dh)`; `inverse` applies the transpose rotation.
pub fn rope_apply<E: Element>(x: &mut [E], d: usize, heads: usize, start_pos: usize, inverse: bool) {
    let dh = d / heads;
    let rows = x.len() / d;
    for r in 0..rows {
        let pos = (start_pos + r) as f64;
        for i in 0..dh / 2 {
            let theta = pos * ROPE_BASE.powf(-2.0 * i as f64 / dh as f64);
            let (s, co) = theta.sin_cos();
            let (s, co) = (c::<E>(if inverse { -s } else { s }), c::<E>(co));
            for h in 0..heads {
                let a = r * d + h * dh + 2 * i;
                let (x0, x1) = (x[a], x[a + 1]);
                x[a] = x0 * co - x1 * s;
                x[a + 1] = x0 * s + x1 * co;
            }
        }
    }
}

/// Additive sinusoidal position encodings `[rows x d]`.
pub fn sinusoidal_positions<E: Element>(rows: usize, d: usize) -> Vec<E> {
    let mut out = vec![E::zero(); rows * d];
    for p in 0..rows {
        for i in 0..d {
            let k = (i / 2) as f64;
            let angle = p as f64 / ROPE_BASE.powf(2.0 * k / d as f64);
            out[p * d + i] = c(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

// ---------------------------------------------------------------- interpolation

/// Source coordinate of output row `i` when stretching `rows` rows by `factor`:
/// `min(i / factor, rows - 1)`.
pub fn interp_source(i: usize, factor: usize, rows: usize) -> (usize, usize, f64) {
    let p = (i as f64 / factor as f64).min((rows - 1) as f64);
    let lo = p.floor() as usize;
    let hi = (lo + 1).min(rows - 1);
    (lo, hi, p - lo as f64)
}

pub fn interp_rows_forward<E: Element>(x: &[E], rows: usize, cols: usize, factor: usize) -> Vec<E> {
    let out_rows = rows * factor;
    let mut y = vec![E::zero(); out_rows * cols];
    for i in 0..out_rows {
        let (lo, hi, w) = interp_source(i, factor, rows);
        let (wl, wh) = (c::<E>(1.0 - w), c::<E>(w));
        for j in 0..cols {
            y[i * cols + j] = wl * x[lo * cols + j] + wh * x[hi * cols + j];
        }
    }
    y
}

pub fn interp_rows_backward<E: Element>(dy: &[E], rows: usize, cols: usize, factor: usize) -> Vec<E> {
    let mut dx = vec![E::zero(); rows * cols];
    for i in 0..rows * factor {
        let (lo, hi, w) = interp_source(i, factor, rows);
        let (wl, wh) = (c::<E>(1.0 - w), c::<E>(w));
        for j in 0..cols {
            dx[lo * cols + j] += wl * dy[i * cols + j];
            dx[hi * cols + j] += wh * dy[i * cols + j];
        }
    }
    dx
}

// ---------------------------------------------------------------- CTC

/// Blank-augmented label sequence `[b, l1, b, l2, ..., b]`.
fn ctc_extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &t in target {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

/// Minimal number of frames able to emit `target` (one extra blank between repeats).
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC negative log-likelihood from per-frame log-probabilities
/// `logp [frames x classes]`. Returns `(loss, dlogits)` where the gradient is
/// taken with respect to the unnormalized logits that produced `logp`.
pub fn ctc_forward_backward<E: Element>(
    logp: &[E],
    frames: usize,
    classes: usize,
    target: &[usize],
    blank: usize,
) -> Result<(E, Vec<E>)> {
    let required = ctc_min_frames(target).max(1);
    if frames < required {
        return Err(Error::CtcLength { frames, target_len: target.len(), required });
    }
    let ext = ctc_extended(target, blank);
    let s_len = ext.len();
    let ninf = E::neg_infinity();
    let lp = |t: usize, s: usize| logp[t * classes + ext[s]];
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_sum_exp(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if can_skip(s) {
                a = log_sum_exp(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp(t, s) };
        }
    }
    let mut beta = vec![ninf; frames * s_len];
    let last = frames - 1;
    beta[last * s_len + s_len - 1] = lp(last, s_len - 1);
    if s_len > 1 {
        beta[last * s_len + s_len - 2] = lp(last, s_len - 2);
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_sum_exp(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                b = log_sum_exp(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = if b == ninf { ninf } else { b + lp(t, s) };
        }
    }
    let mut log_p = alpha[last * s_len + s_len - 1];
    if s_len > 1 {
        log_p = log_sum_exp(log_p, alpha[last * s_len + s_len - 2]);
    }
    if !log_p.is_finite() {
        return Err(Error::CtcLength { frames, target_len: target.len(), required });
    }

    let mut grad = vec![E::zero(); frames * classes];
    let mut occ = vec![ninf; classes];
    for t in 0..frames {
        occ.iter_mut().for_each(|v| *v = ninf);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab != ninf && !ab.is_nan() {
                occ[ext[s]] = log_sum_exp(occ[ext[s]], ab);
            }
        }
        for k in 0..classes {
            let y = logp[t * classes + k];
            let mut gk = y.exp();
            if occ[k] != ninf {
                gk -= (occ[k] - y - log_p).exp();
            }
            grad[t * classes + k] = gk;
        }
    }
    Ok((-log_p, grad))
}
