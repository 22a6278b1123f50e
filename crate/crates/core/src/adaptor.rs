//! The EMG adaptor: strided convolutions, a sequence backbone and a two-layer
//! projection into the language model's embedding space.
//!
//! Wiring:
//!
//! ```text
//! stem conv (stem_stride) + GeLU
//! res_blocks x [conv k, stride 2 + GeLU -> conv k, stride 1; skip = 1x1 conv, stride 2; GeLU(sum)]
//! backbone (none_fc | lstm | bilstm | transformer_sin | transformer_rope)
//! tail conv (tail_stride) + GeLU
//! linear inner -> inner + GeLU -> linear inner -> output_dim
//! ```
//!
//! All convolutions use same-left padding, so every stage maps `T` rows to
//! `ceil(T / stride)` rows and the total factor is
//! `stem_stride * 2^res_blocks * tail_stride`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv, Linear, Lstm, TransformerBlock};
use crate::numerics::kernels::sinusoidal_positions;
use crate::numerics::{Element, Graph, ParameterSet, Tensor, Var};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Raw,
    Features,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    NoneFc,
    Lstm,
    Bilstm,
    TransformerSin,
    TransformerRope,
}

impl Backbone {
    pub const ALL: [Backbone; 5] =
        [Backbone::NoneFc, Backbone::Lstm, Backbone::Bilstm, Backbone::TransformerSin, Backbone::TransformerRope];

    pub fn name(self) -> &'static str {
        match self {
            Backbone::NoneFc => "none_fc",
            Backbone::Lstm => "lstm",
            Backbone::Bilstm => "bilstm",
            Backbone::TransformerSin => "transformer_sin",
            Backbone::TransformerRope => "transformer_rope",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::param("backbone", format!("unknown backbone `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptorConfig {
    pub input_mode: InputMode,
    pub input_dim: usize,
    pub stem_stride: usize,
    pub stem_kernel: usize,
    pub res_blocks: usize,
    pub block_kernel: usize,
    pub backbone: Backbone,
    pub backbone_hidden: usize,
    pub backbone_layers: usize,
    pub backbone_heads: usize,
    pub tail_stride: usize,
    pub tail_kernel: usize,
    pub inner_dim: usize,
    pub output_dim: usize,
}

impl Default for AdaptorConfig {
    /// Desk-scale features-mode configuration (factor 8).
    fn default() -> Self {
        Self {
            input_mode: InputMode::Features,
            input_dim: 112,
            stem_stride: 1,
            stem_kernel: 3,
            res_blocks: 2,
            block_kernel: 3,
            backbone: Backbone::Bilstm,
            backbone_hidden: 64,
            backbone_layers: 1,
            backbone_heads: 4,
            tail_stride: 2,
            tail_kernel: 3,
            inner_dim: 64,
            output_dim: 64,
        }
    }
}

impl AdaptorConfig {
    /// Raw-signal configuration with the factor-48 stride layout 6, 2, 2, 2.
    pub fn raw(channels: usize, output_dim: usize) -> Self {
        Self {
            input_mode: InputMode::Raw,
            input_dim: channels,
            stem_stride: 6,
            stem_kernel: 12,
            output_dim,
            ..Self::default()
        }
    }

    /// Raw 8-channel BiLSTM adaptor projecting to a 3072-wide embedding
    /// space; 5,976,960 parameters.
    pub fn reference_bilstm() -> Self {
        Self { inner_dim: 384, backbone_hidden: 320, backbone_layers: 1, ..Self::raw(8, 3072) }
    }

    pub fn downsample_factor(&self) -> usize {
        self.stem_stride * (1 << self.res_blocks) * self.tail_stride
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("stem_stride", self.stem_stride),
            ("stem_kernel", self.stem_kernel),
            ("block_kernel", self.block_kernel),
            ("tail_stride", self.tail_stride),
            ("tail_kernel", self.tail_kernel),
            ("inner_dim", self.inner_dim),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::param(name, "must be >= 1"));
            }
        }
        match self.backbone {
            Backbone::Lstm | Backbone::Bilstm if self.backbone_hidden == 0 || self.backbone_layers == 0 => {
                Err(Error::param("backbone_hidden", "recurrent backbones need hidden >= 1 and layers >= 1"))
            }
            Backbone::TransformerSin | Backbone::TransformerRope
                if self.backbone_layers == 0
                    || self.backbone_heads == 0
                    || self.inner_dim % self.backbone_heads != 0
                    || (self.backbone == Backbone::TransformerRope && (self.inner_dim / self.backbone_heads) % 2 != 0) =>
            {
                Err(Error::param("backbone_heads", "inner_dim must split into heads (even head size for RoPE)"))
            }
            _ => Ok(()),
        }
    }

    /// Human-readable layer list.
    pub fn wiring(&self) -> String {
        let mut parts = vec![format!("stem conv(k{},s{})+gelu", self.stem_kernel, self.stem_stride)];
        for i in 0..self.res_blocks {
            parts.push(format!("resblock{i}(k{},s2)", self.block_kernel));
        }
        parts.push(match self.backbone {
            Backbone::NoneFc => "fc+gelu".to_string(),
            Backbone::Lstm => format!("lstm(h{},l{})", self.backbone_hidden, self.backbone_layers),
            Backbone::Bilstm => format!("bilstm(h{},l{})", self.backbone_hidden, self.backbone_layers),
            Backbone::TransformerSin => format!("transformer+sin(l{},h{})", self.backbone_layers, self.backbone_heads),
            Backbone::TransformerRope => format!("transformer+rope(l{},h{})", self.backbone_layers, self.backbone_heads),
        });
        parts.push(format!("tail conv(k{},s{})+gelu", self.tail_kernel, self.tail_stride));
        parts.push(format!("linear({0}->{0})+gelu", self.inner_dim));
        parts.push(format!("linear({}->{})", self.inner_dim, self.output_dim));
        parts.join(" > ")
    }
}

/// Rows produced for `t` input rows: `ceil` through every strided stage.
pub fn output_length(t: usize, config: &AdaptorConfig) -> usize {
    let mut n = t.max(1).div_ceil(config.stem_stride);
    for _ in 0..config.res_blocks {
        n = n.div_ceil(2);
    }
    n.div_ceil(config.tail_stride)
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    skip: Conv,
}

#[derive(Clone, Debug)]
enum BackboneLayers {
    Fc(Linear),
    Lstm(Vec<Lstm>),
    Bilstm(Vec<(Lstm, Lstm)>),
    Transformer { blocks: Vec<TransformerBlock>, sinusoidal: bool },
}

#[derive(Clone, Debug)]
struct Wiring {
    stem: Conv,
    blocks: Vec<ResBlock>,
    backbone: BackboneLayers,
    tail: Conv,
    proj1: Linear,
    proj2: Linear,
}

/// An adaptor: configuration, wiring and its own parameter set.
#[derive(Clone, Debug)]
pub struct Adaptor<E> {
    pub config: AdaptorConfig,
    pub params: ParameterSet<E>,
    wiring: Wiring,
}

/// Embeddings for one utterance, `[T_hat x F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence<E> {
    pub embeddings: Tensor<E>,
    pub utterance_id: String,
}

/// Builds an adaptor with seeded uniform fan-in initialization.
pub fn build_adaptor<E: Element>(config: &AdaptorConfig, seed: u64) -> Result<Adaptor<E>> {
    config.validate()?;
    let mut rng = rng_for(seed, "adaptor");
    let mut ps = ParameterSet::new();
    let inner = config.inner_dim;
    let stem = Conv::new(&mut ps, "stem", config.input_dim, inner, config.stem_kernel, config.stem_stride, &mut rng)?;
    let blocks = (0..config.res_blocks)
        .map(|i| {
            Ok(ResBlock {
                conv1: Conv::new(&mut ps, &format!("block{i}.conv1"), inner, inner, config.block_kernel, 2, &mut rng)?,
                conv2: Conv::new(&mut ps, &format!("block{i}.conv2"), inner, inner, config.block_kernel, 1, &mut rng)?,
                skip: Conv::new(&mut ps, &format!("block{i}.skip"), inner, inner, 1, 2, &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let h = config.backbone_hidden;
    let (backbone, backbone_out) = match config.backbone {
        Backbone::NoneFc => (BackboneLayers::Fc(Linear::new(&mut ps, "fc", inner, inner, true, &mut rng)?), inner),
        Backbone::Lstm => {
            let layers = (0..config.backbone_layers)
                .map(|l| Lstm::new(&mut ps, &format!("lstm{l}"), if l == 0 { inner } else { h }, h, false, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            (BackboneLayers::Lstm(layers), h)
        }
        Backbone::Bilstm => {
            let layers = (0..config.backbone_layers)
                .map(|l| {
                    let d = if l == 0 { inner } else { 2 * h };
                    Ok((
                        Lstm::new(&mut ps, &format!("bilstm{l}.fwd"), d, h, false, &mut rng)?,
                        Lstm::new(&mut ps, &format!("bilstm{l}.bwd"), d, h, true, &mut rng)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            (BackboneLayers::Bilstm(layers), 2 * h)
        }
        Backbone::TransformerSin | Backbone::TransformerRope => {
            let rope = config.backbone == Backbone::TransformerRope;
            let blocks = (0..config.backbone_layers)
                .map(|l| {
                    TransformerBlock::new(
                        &mut ps,
                        &format!("transformer{l}"),
                        inner,
                        config.backbone_heads,
                        4 * inner,
                        rope,
                        false,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (BackboneLayers::Transformer { blocks, sinusoidal: !rope }, inner)
        }
    };
    let tail = Conv::new(&mut ps, "tail", backbone_out, inner, config.tail_kernel, config.tail_stride, &mut rng)?;
    let proj1 = Linear::new(&mut ps, "proj1", inner, inner, true, &mut rng)?;
    let proj2 = Linear::new(&mut ps, "proj2", inner, config.output_dim, true, &mut rng)?;
    Ok(Adaptor { config: config.clone(), params: ps, wiring: Wiring { stem, blocks, backbone, tail, proj1, proj2 } })
}

impl<E: Element> Adaptor<E> {
    pub fn param_count(&self, trainable_only: bool) -> usize {
        self.params.count(trainable_only)
    }

    pub fn min_input_len(&self) -> usize {
        self.config.downsample_factor()
    }

    /// Records the adaptor on `g`; `x` is `[T x input_dim]`.
    pub fn forward(&self, g: &mut Graph<E>, x: Var) -> Result<Var> {
        let (t, d) = (g.value(x).rows(), g.value(x).cols());
        if t < self.min_input_len() {
            return Err(Error::TooShort { len: t, min: self.min_input_len() });
        }
        if d != self.config.input_dim {
            return Err(Error::shape("adaptor", format!("input width {d}, expected {}", self.config.input_dim)));
        }
        let ps = &self.params;
        let w = &self.wiring;
        let y = w.stem.forward(g, ps, x)?;
        let mut y = g.gelu(y);
        for b in &w.blocks {
            let h = b.conv1.forward(g, ps, y)?;
            let h = g.gelu(h);
            let h = b.conv2.forward(g, ps, h)?;
            let s = b.skip.forward(g, ps, y)?;
            let sum = g.add(h, s)?;
            y = g.gelu(sum);
        }
        y = match &w.backbone {
            BackboneLayers::Fc(l) => {
                let h = l.forward(g, ps, y)?;
                g.gelu(h)
            }
            BackboneLayers::Lstm(layers) => {
                for l in layers {
                    y = l.forward(g, ps, y)?;
                }
                y
            }
            BackboneLayers::Bilstm(layers) => {
                for (f, b) in layers {
                    let hf = f.forward(g, ps, y)?;
                    let hb = b.forward(g, ps, y)?;
                    y = g.concat_cols(&[hf, hb])?;
                }
                y
            }
            BackboneLayers::Transformer { blocks, sinusoidal } => {
                if *sinusoidal {
                    let (rows, cols) = (g.value(y).rows(), g.value(y).cols());
                    let pos = g.input(Tensor::new(vec![rows, cols], sinusoidal_positions(rows, cols))?, false);
                    y = g.add(y, pos)?;
                }
                for b in blocks {
                    y = b.forward(g, ps, y)?;
                }
                y
            }
        };
        let y = w.tail.forward(g, ps, y)?;
        let y = g.gelu(y);
        let y = w.proj1.forward(g, ps, y)?;
        let y = g.gelu(y);
        w.proj2.forward(g, ps, y)
    }

    /// Inference without a trainable tape.
    pub fn embed(&self, input: &Tensor<E>, utterance_id: &str) -> Result<EmbeddingSequence<E>> {
        let mut g = Graph::new();
        let x = g.input(input.clone(), false);
        let y = self.forward(&mut g, x)?;
        Ok(EmbeddingSequence { embeddings: g.value(y).clone(), utterance_id: utterance_id.to_string() })
    }

    /// Same adaptor at another precision.
    pub fn cast<F: Element>(&self) -> Adaptor<F> {
        Adaptor { config: self.config.clone(), params: self.params.cast(), wiring: self.wiring.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(t: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![t, d], (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tiny(backbone: Backbone) -> AdaptorConfig {
        AdaptorConfig { input_dim: 4, inner_dim: 8, backbone_hidden: 6, backbone_heads: 2, output_dim: 5, backbone, ..AdaptorConfig::raw(4, 5) }
    }

    #[test]
    fn output_length_examples() {
        let raw = AdaptorConfig::raw(8, 64);
        assert_eq!(raw.downsample_factor(), 48);
        assert_eq!(output_length(480, &raw), 10);
        assert_eq!(output_length(4800, &raw), 100);
        assert_eq!(output_length(48, &raw), 1);
        assert_eq!(output_length(47, &raw), 1);
        assert_eq!(output_length(96, &AdaptorConfig::default()), 12);
    }

    #[test]
    fn forward_shapes_follow_output_length() {
        let cfg = tiny(Backbone::Bilstm);
        let a = build_adaptor::<f64>(&cfg, 0).unwrap();
        for t in [48usize, 49, 95, 96, 97, 150, 481] {
            let e = a.embed(&random_input(t, 4, t as u64), "u").unwrap();
            assert_eq!(e.embeddings.shape(), &[output_length(t, &cfg), 5]);
        }
        assert!(matches!(a.embed(&random_input(47, 4, 0), "u"), Err(Error::TooShort { min: 48, .. })));
    }

    #[test]
    fn all_backbones_share_the_shape_contract() {
        for b in Backbone::ALL {
            let a = build_adaptor::<f64>(&tiny(b), 1).unwrap();
            let e = a.embed(&random_input(200, 4, 2), "u").unwrap();
            assert_eq!(e.embeddings.shape(), &[5, 5], "{}", b.name());
            assert!(e.embeddings.is_finite());
        }
    }

    #[test]
    fn wiring_strings() {
        let cfg = AdaptorConfig::raw(8, 64);
        assert_eq!(
            cfg.wiring(),
            "stem conv(k12,s6)+gelu > resblock0(k3,s2) > resblock1(k3,s2) > bilstm(h64,l1) > \
             tail conv(k3,s2)+gelu > linear(64->64)+gelu > linear(64->64)"
        );
        let fc = build_adaptor::<f32>(&AdaptorConfig { backbone: Backbone::NoneFc, ..cfg }, 0).unwrap();
        assert!(fc.params.iter().all(|(_, p)| !p.name.contains("lstm") && !p.name.contains("transformer")));
    }

    #[test]
    fn parameter_count_ordering() {
        let count = |b| build_adaptor::<f32>(&tiny(b), 0).unwrap().param_count(true);
        assert!(count(Backbone::NoneFc) < count(Backbone::Lstm));
        assert!(count(Backbone::Lstm) < count(Backbone::Bilstm));
    }

    #[test]
    fn reference_count_is_documented_value() {
        let a = build_adaptor::<f32>(&AdaptorConfig::reference_bilstm(), 0).unwrap();
        assert_eq!(a.param_count(true), 5_976_960);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = build_adaptor::<f32>(&AdaptorConfig::default(), 3).unwrap();
        let b = build_adaptor::<f32>(&AdaptorConfig::default(), 3).unwrap();
        let c = build_adaptor::<f32>(&AdaptorConfig::default(), 4).unwrap();
        assert!(a.params.values_bit_equal(&b.params));
        assert!(!a.params.values_bit_equal(&c.params));
    }

    #[test]
    fn every_tensor_receives_gradient() {
        for b in Backbone::ALL {
            let a = build_adaptor::<f64>(&tiny(b), 5).unwrap();
            let mut g = Graph::new();
            let x = g.input(random_input(150, 4, 9), false);
            let y = a.forward(&mut g, x).unwrap();
            let sq = g.mul(y, y).unwrap();
            let loss = g.sum(sq);
            let grads = g.backward(loss).unwrap();
            let mut ps = a.params.clone();
            ps.accumulate(&g, &grads, 1.0);
            for (_, p) in ps.iter() {
                let norm = p.grad.as_ref().map(|t| t.sq_norm().sqrt()).unwrap_or(0.0);
                assert!(norm > 1e-12, "{} {}", b.name(), p.name);
            }
        }
    }

    #[test]
    fn unknown_backbone_is_rejected() {
        assert!(Backbone::parse("gru").is_err());
        assert!(serde_json::from_str::<AdaptorConfig>(r#"{"backbone":"gru"}"#).is_err());
        assert_eq!(Backbone::parse("bilstm").unwrap(), Backbone::Bilstm);
    }
}
