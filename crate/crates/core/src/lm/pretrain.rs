//! Next-token pretraining on transcripts.
//!
//! Besides plain `BOS words EOS` sequences, a fraction of the examples are
//! prompt-wrapped copies: `P1 ++ X ++ P2 ++ BOS words EOS` where `X` stretches
//! each word's own (noisy) input embedding over a few rows with noise rows in
//! between. The model thereby learns to read a word sequence out of the
//! embedding slot that the adaptor later fills.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{assemble_input, masked_ce, PromptTemplate, TinyLm, Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::numerics::{warmup_linear_decay, AdamW, Graph, Tensor};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_frac: f64,
    pub final_lr_frac: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Extra transcripts sampled from a bigram model of the training text.
    pub extra_transcripts: usize,
    /// Prompt-wrapped copy examples per plain example.
    pub copy_fraction: f64,
    /// Inclusive range of rows per word in copy examples.
    pub copy_rows: (usize, usize),
    /// Inclusive range of noise rows between words.
    pub copy_gap: (usize, usize),
    pub copy_noise: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 3e-3,
            warmup_frac: 0.05,
            final_lr_frac: 0.1,
            weight_decay: 0.01,
            clip_norm: 1.0,
            extra_transcripts: 2000,
            copy_fraction: 0.5,
            copy_rows: (2, 6),
            copy_gap: (0, 2),
            copy_noise: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub initial_heldout: f64,
    pub final_heldout: f64,
    /// `(epoch, mean train loss per token, held-out loss)`.
    pub curve: Vec<(usize, f64, f64)>,
    pub steps: usize,
}

enum Example {
    Plain(Vec<usize>),
    Copy(Vec<usize>),
}

/// Mean next-token loss per predicted token over `BOS words EOS`.
pub fn heldout_loss(lm: &TinyLm<f32>, sequences: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for s in sequences {
        let mut g = Graph::new();
        let (input, targets) = plain_io(s);
        let x = lm.embed_ids(&mut g, &input)?;
        let logits = lm.forward(&mut g, x)?;
        let loss = g.ce_temperature(logits, &targets, 1.0)?;
        total += g.value(loss).data()[0] as f64;
        tokens += targets.len();
    }
    if tokens == 0 {
        return Err(Error::Empty("held-out transcripts".into()));
    }
    Ok(total / tokens as f64)
}

/// Samples `n` word sequences from the first-word, successor and length
/// statistics of `seqs`. A chain stops early at a word never seen with a
/// successor.
pub fn bigram_transcripts(seqs: &[Vec<usize>], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let seqs: Vec<&Vec<usize>> = seqs.iter().filter(|s| !s.is_empty()).collect();
    if seqs.is_empty() {
        return Vec::new();
    }
    let mut next: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for s in &seqs {
        for w in s.windows(2) {
            next.entry(w[0]).or_default().push(w[1]);
        }
    }
    (0..n)
        .map(|_| {
            let len = seqs[rng.random_range(0..seqs.len())].len();
            let mut out = vec![seqs[rng.random_range(0..seqs.len())][0]];
            while out.len() < len {
                match next.get(out.last().unwrap()) {
                    Some(succ) => out.push(succ[rng.random_range(0..succ.len())]),
                    None => break,
                }
            }
            out
        })
        .collect()
}

fn plain_io(words: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = vec![BOS];
    input.extend_from_slice(words);
    let mut targets = words.to_vec();
    targets.push(EOS);
    (input, targets)
}

fn copy_prefix(lm: &TinyLm<f32>, words: &[usize], cfg: &PretrainConfig, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let f = lm.dim();
    let noise = Normal::new(0.0, cfg.copy_noise.max(0.0)).map_err(|e| Error::param("copy_noise", e.to_string()))?;
    let table = lm.embedding_rows(words)?;
    let mut data = Vec::new();
    for (i, _) in words.iter().enumerate() {
        if i > 0 {
            for _ in 0..rng.random_range(cfg.copy_gap.0..=cfg.copy_gap.1) {
                data.extend((0..f).map(|_| noise.sample(rng) as f32));
            }
        }
        for _ in 0..rng.random_range(cfg.copy_rows.0..=cfg.copy_rows.1) {
            data.extend(table.row(i).iter().map(|&v| v + noise.sample(rng) as f32));
        }
    }
    let rows = data.len() / f;
    Tensor::new(vec![rows, f], data)
}

/// Trains `lm` on the given transcripts and freezes it. Returns the
/// held-out loss before and after.
pub fn pretrain_lm(
    lm: &mut TinyLm<f32>,
    vocab: &Vocabulary,
    template: &PromptTemplate,
    train: &[String],
    heldout: &[String],
    config: &PretrainConfig,
    seed: u64,
) -> Result<PretrainReport> {
    if train.is_empty() {
        return Err(Error::Empty("pretraining transcripts".into()));
    }
    if config.batch_size == 0 || config.copy_rows.0 == 0 || config.copy_rows.0 > config.copy_rows.1 || config.copy_gap.0 > config.copy_gap.1 {
        return Err(Error::param("pretrain", "batch_size and copy_rows must be >= 1 with ordered ranges"));
    }
    let tok = |s: &[String]| -> Result<Vec<Vec<usize>>> {
        s.iter().map(|t| vocab.tokenize(t, false)).filter(|r| !matches!(r, Ok(v) if v.is_empty())).collect()
    };
    let mut train_ids = tok(train)?;
    let heldout_ids = tok(heldout)?;
    if train_ids.is_empty() {
        return Err(Error::Empty("pretraining transcripts".into()));
    }
    let mut rng = rng_for(seed, "pretrain");
    let extra = bigram_transcripts(&train_ids, config.extra_transcripts, &mut rng_for(seed, "lm-text"));
    train_ids.extend(extra);
    let n_copy = (train_ids.len() as f64 * config.copy_fraction).round() as usize;
    let per_epoch = train_ids.len() + n_copy;
    let steps_per_epoch = per_epoch.div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let opt = AdamW { weight_decay: config.weight_decay, ..AdamW::default() };
    let initial_heldout = if heldout_ids.is_empty() { f64::NAN } else { heldout_loss(lm, &heldout_ids)? };
    let mut curve = Vec::new();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut examples: Vec<Example> = train_ids.iter().cloned().map(Example::Plain).collect();
        for _ in 0..n_copy {
            let i = rng.random_range(0..train_ids.len());
            examples.push(Example::Copy(train_ids[i].clone()));
        }
        examples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in examples.chunks(config.batch_size) {
            let batch_tokens: usize = batch.iter().map(|e| match e { Example::Plain(w) | Example::Copy(w) => w.len() + 1 }).sum();
            let scale = 1.0 / batch_tokens as f32;
            lm.params.zero_grad();
            for ex in batch {
                let mut g = Graph::new();
                let loss = match ex {
                    Example::Plain(w) => {
                        let (input, targets) = plain_io(w);
                        let x = lm.embed_ids(&mut g, &input)?;
                        let logits = lm.forward(&mut g, x)?;
                        g.ce_temperature(logits, &targets, 1.0)?
                    }
                    Example::Copy(w) => {
                        let prefix = copy_prefix(lm, w, config, &mut rng)?;
                        let e = g.input(prefix, false);
                        let a = assemble_input(&mut g, lm, template, e, Some(w))?;
                        masked_ce(&mut g, lm, &a, 1.0)?
                    }
                };
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step, batch: step % steps_per_epoch });
                }
                epoch_loss += value as f64;
                let grads = g.backward(loss)?;
                lm.params.accumulate(&g, &grads, scale);
            }
            epoch_tokens += batch_tokens;
            lm.params.clip_grad_norm(config.clip_norm);
            let lr = warmup_linear_decay(step, total_steps, config.lr, config.warmup_frac, config.final_lr_frac);
            opt.step(&mut lm.params, lr)?;
            step += 1;
        }
        let h = if heldout_ids.is_empty() { f64::NAN } else { heldout_loss(lm, &heldout_ids)? };
        log::info!("pretrain epoch {epoch}: train {:.4} heldout {h:.4}", epoch_loss / epoch_tokens as f64);
        curve.push((epoch, epoch_loss / epoch_tokens as f64, h));
    }
    lm.freeze();
    let final_heldout = curve.last().map(|c| c.2).unwrap_or(initial_heldout);
    Ok(PretrainReport { initial_heldout, final_heldout, curve, steps: step })
}
