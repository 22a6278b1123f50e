use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform, LayerNorm, Linear, TransformerBlock};
use crate::numerics::{Element, Graph, ParamId, ParameterSet, Tensor, Var};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positions {
    Rope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TinyLmConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub causal: bool,
    pub positions: Positions,
    /// Bound of the uniform initialization of the input embedding table. Kept
    /// small so token embeddings start at the scale the adaptor produces.
    pub embed_init_bound: f64,
    /// Scale of the output head at initialization; small values start the
    /// model near the uniform distribution.
    pub head_init_gain: f64,
}

impl Default for TinyLmConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            layers: 4,
            heads: 4,
            ff_dim: 256,
            max_len: 160,
            causal: true,
            positions: Positions::Rope,
            embed_init_bound: 0.035,
            head_init_gain: 0.1,
        }
    }
}

impl TinyLmConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.causal {
            return Err(Error::param("causal", "the language model is always causal"));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 || (self.embed_dim / self.heads) % 2 != 0
        {
            return Err(Error::param("heads", format!("{} heads do not split width {} into even heads", self.heads, self.embed_dim)));
        }
        if self.layers == 0 || self.ff_dim == 0 || self.max_len == 0 {
            return Err(Error::param("layers/ff_dim/max_len", "must be >= 1"));
        }
        if !(self.embed_init_bound > 0.0 && self.head_init_gain > 0.0) {
            return Err(Error::param("embed_init_bound/head_init_gain", "must be positive"));
        }
        Ok(())
    }
}

/// Where to attach low-rank adapters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Adapters go on the last `last_layers` blocks.
    pub last_layers: usize,
    /// Any of `q`, `k`, `v`, `o`.
    pub targets: Vec<String>,
}

impl Default for LoraConfig {
    /// Rank 1 on the query and value projections of the last block: 256
    /// trainable values, 0.12% of the default model.
    fn default() -> Self {
        Self { rank: 1, alpha: 1.0, last_layers: 1, targets: vec!["q".into(), "v".into()] }
    }
}

/// Decoder-only transformer over a closed vocabulary. The input embedding
/// table has `vocab_size + n_prompt` rows (prompt tokens are input-only);
/// the untied output head covers `vocab_size` classes.
#[derive(Clone, Debug)]
pub struct TinyLm<E> {
    pub config: TinyLmConfig,
    pub vocab_size: usize,
    pub n_prompt: usize,
    pub params: ParameterSet<E>,
    pub(crate) embed: ParamId,
    pub(crate) blocks: Vec<TransformerBlock>,
    pub(crate) ln_f: LayerNorm,
    pub(crate) head: Linear,
}

pub fn build_lm<E: Element>(config: &TinyLmConfig, vocab_size: usize, n_prompt: usize, seed: u64) -> Result<TinyLm<E>> {
    config.validate()?;
    let mut rng = rng_for(seed, "lm");
    let mut ps = ParameterSet::new();
    let f = config.embed_dim;
    let embed = ps.add("embed", uniform(&[vocab_size + n_prompt, f], config.embed_init_bound, &mut rng), true)?;
    let blocks = (0..config.layers)
        .map(|l| TransformerBlock::new(&mut ps, &format!("block{l}"), f, config.heads, config.ff_dim, true, true, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let ln_f = LayerNorm::new(&mut ps, "ln_f", f)?;
    let head = Linear::scaled(&mut ps, "head", f, vocab_size, true, config.head_init_gain, &mut rng)?;
    if let Some(b) = head.b {
        ps.get_mut(b).value.data_mut().iter_mut().for_each(|v| *v = E::zero());
    }
    Ok(TinyLm { config: config.clone(), vocab_size, n_prompt, params: ps, embed, blocks, ln_f, head })
}

impl<E: Element> TinyLm<E> {
    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Records embedding rows for `ids` (vocabulary or reserved prompt ids).
    pub fn embed_ids(&self, g: &mut Graph<E>, ids: &[usize]) -> Result<Var> {
        let table = g.param(&self.params, self.embed);
        g.gather(table, ids)
    }

    /// Embedding rows without a tape.
    pub fn embedding_rows(&self, ids: &[usize]) -> Result<Tensor<E>> {
        let table = &self.params.get(self.embed).value;
        let rows = ids
            .iter()
            .map(|&i| {
                (i < table.rows())
                    .then(|| table.row(i).to_vec())
                    .ok_or_else(|| Error::shape("embedding_rows", format!("id {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::from_rows(&rows)
    }

    /// Final normalized hidden states `[T x F]`.
    pub fn hidden(&self, g: &mut Graph<E>, x: Var) -> Result<Var> {
        let (t, f) = (g.value(x).rows(), g.value(x).cols());
        if f != self.dim() {
            return Err(Error::shape("lm_forward", format!("input width {f}, model width {}", self.dim())));
        }
        if t > self.config.max_len {
            return Err(Error::TooLong { len: t, limit: self.config.max_len });
        }
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, &self.params, h)?;
        }
        self.ln_f.forward(g, &self.params, h)
    }

    pub fn head(&self, g: &mut Graph<E>, h: Var) -> Result<Var> {
        self.head.forward(g, &self.params, h)
    }

    /// Logits `[T x |V|]` for every input row.
    pub fn forward(&self, g: &mut Graph<E>, x: Var) -> Result<Var> {
        let h = self.hidden(g, x)?;
        self.head(g, h)
    }

    /// Tape-free forward of an input embedding matrix.
    pub fn lm_forward(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let mut g = Graph::new();
        let x = g.input(input.clone(), false);
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn freeze(&mut self) {
        self.params.freeze_all();
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|(_, p)| !p.trainable)
    }

    /// Freezes the base weights and adds trainable `B = 0` adapters.
    pub fn apply_lora(&mut self, config: &LoraConfig, seed: u64) -> Result<()> {
        let f = self.dim();
        if config.rank == 0 || config.rank > f {
            return Err(Error::param("rank", format!("must be in 1..={f}, got {}", config.rank)));
        }
        if config.last_layers == 0 || config.last_layers > self.blocks.len() {
            return Err(Error::param("last_layers", format!("must be in 1..={}", self.blocks.len())));
        }
        self.freeze();
        let mut rng = rng_for(seed, "lora");
        let first = self.blocks.len() - config.last_layers;
        for (l, block) in self.blocks.iter_mut().enumerate().skip(first) {
            for t in &config.targets {
                let layer = match t.as_str() {
                    "q" => &mut block.q,
                    "k" => &mut block.k,
                    "v" => &mut block.v,
                    "o" => &mut block.o,
                    other => return Err(Error::param("targets", format!("unknown projection `{other}`"))),
                };
                if layer.lora.is_some() {
                    return Err(Error::param("targets", format!("adapter already on block{l}.{t}")));
                }
                layer.add_lora(&mut self.params, &format!("block{l}.{t}"), config.rank, config.alpha, &mut rng)?;
            }
        }
        Ok(())
    }

    pub fn trainable_fraction(&self) -> f64 {
        self.params.count(true) as f64 / self.params.count(false).max(1) as f64
    }

    pub fn cast<F: Element>(&self) -> TinyLm<F> {
        TinyLm {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            n_prompt: self.n_prompt,
            params: self.params.cast(),
            embed: self.embed,
            blocks: self.blocks.clone(),
            ln_f: self.ln_f.clone(),
            head: self.head.clone(),
        }
    }
}
