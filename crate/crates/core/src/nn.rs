//! Parameterized layers shared by the adaptor and the language model.
//!
//! Layers only hold [`ParamId`]s; the values live in a [`ParameterSet`], so
//! the same wiring works for any [`Element`] after a `cast`.
//! Initialization is uniform fan-in: weights and biases are drawn from
//! `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, Padding, ParamId, ParameterSet, Tensor, Var};

pub fn uniform<E: Element>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<E> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| E::from_f64_lossy(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Low-rank delta `scale * x A B` on top of a frozen projection.
#[derive(Clone, Debug)]
pub struct Lora {
    pub a: ParamId,
    pub b: ParamId,
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub lora: Option<Lora>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<E: Element>(
        ps: &mut ParameterSet<E>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = fan_in_bound(in_dim);
        let w = ps.add(format!("{name}.w"), uniform(&[in_dim, out_dim], bound, rng), true)?;
        let b = if bias { Some(ps.add(format!("{name}.b"), uniform(&[out_dim], bound, rng), true)?) } else { None };
        Ok(Self { w, b, lora: None, in_dim, out_dim })
    }

    /// Same as [`Linear::new`] with the weights scaled by `gain`.
    pub fn scaled<E: Element>(
        ps: &mut ParameterSet<E>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let l = Self::new(ps, name, in_dim, out_dim, bias, rng)?;
        ps.get_mut(l.w).value.data_mut().iter_mut().for_each(|v| *v *= E::from_f64_lossy(gain));
        Ok(l)
    }

    /// Attaches a rank-`rank` adapter. `A` is random, `B` starts at zero so
    /// the layer output is unchanged until training moves `B`.
    pub fn add_lora<E: Element>(
        &mut self,
        ps: &mut ParameterSet<E>,
        name: &str,
        rank: usize,
        alpha: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if rank == 0 {
            return Err(Error::param("lora_rank", "must be >= 1"));
        }
        let a = ps.add(format!("{name}.lora_a"), uniform(&[self.in_dim, rank], fan_in_bound(self.in_dim), rng), true)?;
        let b = ps.add(format!("{name}.lora_b"), Tensor::zeros(&[rank, self.out_dim]), true)?;
        self.lora = Some(Lora { a, b, scale: alpha / rank as f64 });
        Ok(())
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, ps: &ParameterSet<E>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = self.b.map(|b| g.param(ps, b));
        let mut y = g.linear(x, w, b)?;
        if let Some(l) = &self.lora {
            let a = g.param(ps, l.a);
            let bb = g.param(ps, l.b);
            let xa = g.matmul(x, a)?;
            let d = g.matmul(xa, bb)?;
            let d = g.scale(d, E::from_f64_lossy(l.scale));
            y = g.add(y, d)?;
        }
        Ok(y)
    }

    /// Plain-slice forward for inference, rows of `x` are inputs.
    pub fn apply<E: Element>(&self, ps: &ParameterSet<E>, x: &[E]) -> Vec<E> {
        let rows = x.len() / self.in_dim;
        let mut y = crate::numerics::kernels::matmul(x, ps.get(self.w).value.data(), rows, self.in_dim, self.out_dim);
        if let Some(b) = self.b {
            crate::numerics::kernels::add_row_inplace(&mut y, ps.get(b).value.data());
        }
        if let Some(l) = &self.lora {
            let rank = ps.get(l.a).value.shape()[1];
            let xa = crate::numerics::kernels::matmul(x, ps.get(l.a).value.data(), rows, self.in_dim, rank);
            let d = crate::numerics::kernels::matmul(&xa, ps.get(l.b).value.data(), rows, rank, self.out_dim);
            let s = E::from_f64_lossy(l.scale);
            y.iter_mut().zip(d).for_each(|(a, b)| *a += b * s);
        }
        y
    }
}

/// 1-D convolution with same-left padding, kernel `[K x C_in x C_out]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv {
    pub fn new<E: Element>(
        ps: &mut ParameterSet<E>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::param(name, format!("kernel {kernel} and stride {stride} must be >= 1")));
        }
        let bound = fan_in_bound(kernel * c_in);
        let w = ps.add(format!("{name}.w"), uniform(&[kernel, c_in, c_out], bound, rng), true)?;
        let b = ps.add(format!("{name}.b"), uniform(&[c_out], bound, rng), true)?;
        Ok(Self { w, b, kernel, stride, c_in, c_out })
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, ps: &ParameterSet<E>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.conv1d(x, w, Some(b), self.stride, Padding::SameLeft)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<E: Element>(ps: &mut ParameterSet<E>, name: &str, dim: usize) -> Result<Self> {
        let gain = ps.add(format!("{name}.gain"), Tensor::full(&[dim], E::one()), true)?;
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[dim]), true)?;
        Ok(Self { gain, bias })
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, ps: &ParameterSet<E>, x: Var) -> Result<Var> {
        let gain = g.param(ps, self.gain);
        let bias = g.param(ps, self.bias);
        g.layer_norm(x, gain, bias)
    }

    pub fn apply<E: Element>(&self, ps: &ParameterSet<E>, x: &[E]) -> Vec<E> {
        crate::numerics::kernels::layer_norm_forward(x, ps.get(self.gain).value.data(), ps.get(self.bias).value.data()).0
    }
}

/// One LSTM direction: input projection with bias plus recurrent weights.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input: Linear,
    pub w_hh: ParamId,
    pub hidden: usize,
    pub reverse: bool,
}

impl Lstm {
    pub fn new<E: Element>(
        ps: &mut ParameterSet<E>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        reverse: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let bound = fan_in_bound(hidden);
        let w = ps.add(format!("{name}.w_ih"), uniform(&[in_dim, 4 * hidden], bound, rng), true)?;
        let b = ps.add(format!("{name}.b"), uniform(&[4 * hidden], bound, rng), true)?;
        let w_hh = ps.add(format!("{name}.w_hh"), uniform(&[hidden, 4 * hidden], bound, rng), true)?;
        let input = Linear { w, b: Some(b), lora: None, in_dim, out_dim: 4 * hidden };
        Ok(Self { input, w_hh, hidden, reverse })
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, ps: &ParameterSet<E>, x: Var) -> Result<Var> {
        let xp = self.input.forward(g, ps, x)?;
        let whh = g.param(ps, self.w_hh);
        g.lstm(xp, whh, self.reverse)
    }
}

/// Pre-LN transformer block: attention then a GeLU feed-forward, both
/// residual.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub heads: usize,
    pub rope: bool,
    pub causal: bool,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element>(
        ps: &mut ParameterSet<E>,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rope: bool,
        causal: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 || (rope && (dim / heads) % 2 != 0) {
            return Err(Error::param(name, format!("width {dim} does not split into {heads} heads")));
        }
        Ok(Self {
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), dim)?,
            q: Linear::new(ps, &format!("{name}.q"), dim, dim, true, rng)?,
            // A key bias shifts every score of a query equally and cancels in the softmax.
            k: Linear::new(ps, &format!("{name}.k"), dim, dim, false, rng)?,
            v: Linear::new(ps, &format!("{name}.v"), dim, dim, true, rng)?,
            o: Linear::new(ps, &format!("{name}.o"), dim, dim, true, rng)?,
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), dim)?,
            ff1: Linear::new(ps, &format!("{name}.ff1"), dim, ff_dim, true, rng)?,
            ff2: Linear::new(ps, &format!("{name}.ff2"), ff_dim, dim, true, rng)?,
            heads,
            rope,
            causal,
        })
    }

    pub fn forward<E: Element>(&self, g: &mut Graph<E>, ps: &ParameterSet<E>, x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, ps, x)?;
        let mut q = self.q.forward(g, ps, h)?;
        let mut k = self.k.forward(g, ps, h)?;
        let v = self.v.forward(g, ps, h)?;
        if self.rope {
            q = g.rope(q, self.heads, 0)?;
            k = g.rope(k, self.heads, 0)?;
        }
        let a = g.attention(q, k, v, self.heads, self.causal)?;
        let a = self.o.forward(g, ps, a)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, ps, x)?;
        let h = self.ff1.forward(g, ps, h)?;
        let h = g.gelu(h);
        let h = self.ff2.forward(g, ps, h)?;
        g.add(x, h)
    }
}
