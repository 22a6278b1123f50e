//! Incremental decoding with per-layer key/value caches.

use super::TinyLm;
use crate::error::{Error, Result};
use crate::numerics::kernels::{self, attention_forward, gelu, rope_apply};
use crate::numerics::{Element, Tensor};

/// Cached state after a prefix; cloning forks a hypothesis.
#[derive(Clone, Debug)]
pub struct LmState<E> {
    /// Per layer: rotated keys and values, `[len x F]` row-major.
    keys: Vec<Vec<E>>,
    values: Vec<Vec<E>>,
    len: usize,
}

impl<E> LmState<E> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<E: Element> TinyLm<E> {
    fn check_room(&self, extra: usize, len: usize) -> Result<()> {
        if len + extra > self.config.max_len {
            return Err(Error::TooLong { len: len + extra, limit: self.config.max_len });
        }
        Ok(())
    }

    fn logits_of(&self, x_last: &[E]) -> Vec<E> {
        let h = self.ln_f.apply(&self.params, x_last);
        self.head.apply(&self.params, &h)
    }

    /// Runs a prefix `[T x F]` and returns the cache plus the logits of the
    /// last row.
    pub fn start(&self, prefix: &Tensor<E>) -> Result<(LmState<E>, Vec<E>)> {
        let (t, f) = (prefix.rows(), prefix.cols());
        if t == 0 || f != self.dim() {
            return Err(Error::shape("lm session", format!("prefix [{t}x{f}], model width {}", self.dim())));
        }
        self.check_room(0, t)?;
        let ps = &self.params;
        let heads = self.config.heads;
        let mut x = prefix.data().to_vec();
        let mut keys = Vec::with_capacity(self.blocks.len());
        let mut values = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let h = b.ln1.apply(ps, &x);
            let mut q = b.q.apply(ps, &h);
            let mut k = b.k.apply(ps, &h);
            let v = b.v.apply(ps, &h);
            rope_apply(&mut q, f, heads, 0, false);
            rope_apply(&mut k, f, heads, 0, false);
            let (a, _) = attention_forward(&q, &k, &v, t, f, heads, true);
            let a = b.o.apply(ps, &a);
            x.iter_mut().zip(&a).for_each(|(x, a)| *x += *a);
            self.feed_forward(b, &mut x);
            keys.push(k);
            values.push(v);
        }
        let logits = self.logits_of(&x[(t - 1) * f..]);
        Ok((LmState { keys, values, len: t }, logits))
    }

    fn feed_forward(&self, b: &crate::nn::TransformerBlock, x: &mut [E]) {
        let ps = &self.params;
        let h = b.ln2.apply(ps, x);
        let h: Vec<E> = b.ff1.apply(ps, &h).into_iter().map(gelu).collect();
        let h = b.ff2.apply(ps, &h);
        x.iter_mut().zip(&h).for_each(|(x, h)| *x += *h);
    }

    /// Appends one input row (e.g. a token embedding) and returns the logits
    /// at that position.
    pub fn advance_row(&self, state: &mut LmState<E>, row: &[E]) -> Result<Vec<E>> {
        let f = self.dim();
        if row.len() != f {
            return Err(Error::shape("lm session", format!("row width {}, model width {f}", row.len())));
        }
        self.check_room(1, state.len)?;
        let ps = &self.params;
        let heads = self.config.heads;
        let dh = f / heads;
        let pos = state.len;
        let n = pos + 1;
        let scale = E::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let mut x = row.to_vec();
        for (l, b) in self.blocks.iter().enumerate() {
            let h = b.ln1.apply(ps, &x);
            let mut q = b.q.apply(ps, &h);
            let mut k = b.k.apply(ps, &h);
            let v = b.v.apply(ps, &h);
            rope_apply(&mut q, f, heads, pos, false);
            rope_apply(&mut k, f, heads, pos, false);
            state.keys[l].extend_from_slice(&k);
            state.values[l].extend_from_slice(&v);
            let (keys, vals) = (&state.keys[l], &state.values[l]);
            let mut a = vec![E::zero(); f];
            let mut scores = vec![E::zero(); n];
            for hd in 0..heads {
                let qh = &q[hd * dh..(hd + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kh = &keys[j * f + hd * dh..j * f + (hd + 1) * dh];
                    *s = qh.iter().zip(kh).map(|(a, b)| *a * *b).sum::<E>() * scale;
                }
                let p = kernels::softmax_rows(&scores, n, E::one());
                let out = &mut a[hd * dh..(hd + 1) * dh];
                for (j, &pj) in p.iter().enumerate() {
                    let vh = &vals[j * f + hd * dh..j * f + (hd + 1) * dh];
                    out.iter_mut().zip(vh).for_each(|(o, v)| *o += pj * *v);
                }
            }
            let a = b.o.apply(ps, &a);
            x.iter_mut().zip(&a).for_each(|(x, a)| *x += *a);
            self.feed_forward(b, &mut x);
        }
        state.len = n;
        Ok(self.logits_of(&x))
    }

    /// Appends a vocabulary token.
    pub fn advance_token(&self, state: &mut LmState<E>, token: usize) -> Result<Vec<E>> {
        let table = &self.params.get(self.embed).value;
        if token >= table.rows() {
            return Err(Error::shape("lm session", format!("token {token} out of range")));
        }
        let row = table.row(token).to_vec();
        self.advance_row(state, &row)
    }
}
