//! Training loop, ablation harness and data-efficiency sweep.
//!
//! Each optimizer step averages the summed per-utterance losses over the
//! utterances of the batch. Utterances run through separate graphs, which
//! gives the same gradient as padding plus loss masking.

mod ablation;
mod data;
mod sweep;
mod system;

pub use ablation::{default_suite, run_ablation, write_ablation_table, AblationRow, Experiment, FoldRun, Variant};
pub use data::{featurize_corpus, prepare_fold, Example, FeatureCache, FoldData, InputConfig, InputNorm};
pub use sweep::{data_efficiency_sweep, write_curve_csv, CurvePoint};
pub use system::{load_system, save_system, system_from_checkpoint, System, SystemSpec};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decode_eval::{evaluate_split, EvalItem, SplitReport};
use crate::error::{Error, Result};
use crate::numerics::{warmup_linear_decay, AdamW, Graph, ParameterSet};
use crate::rng::rng_indexed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a lower validation loss.
    pub patience: usize,
    /// Validation WER is decoded every this many epochs (and at the end).
    pub val_wer_every: usize,
    /// Stop once a decoded validation WER is at or below this value.
    pub target_val_wer: Option<f64>,
    pub warmup_frac: f64,
    /// The schedule ends at `lr_max * final_lr_frac`.
    pub final_lr_frac: f64,
    pub clip_norm: f64,
    /// Set by the caller from the run seed; not part of the file format.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 5e-5,
            weight_decay: 0.01,
            batch_size: 8,
            max_epochs: 500,
            patience: 50,
            val_wer_every: 10,
            target_val_wer: None,
            warmup_frac: 0.1,
            final_lr_frac: 0.1,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max > 0.0) {
            return Err(Error::param("lr_max", format!("must be positive, got {}", self.lr_max)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.val_wer_every == 0 {
            return Err(Error::param("train", "batch_size, max_epochs and val_wer_every must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    /// Mean summed loss per utterance.
    pub loss: f64,
    pub wer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Validation loss before the first update.
    pub untrained_val_loss: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation WER of the selected parameters.
    pub best_val_wer: f64,
    pub epochs_run: usize,
    pub steps: usize,
}

/// Optimizer steps for `epochs` over `n` utterances.
pub fn steps_per_run(n: usize, batch_size: usize, epochs: usize) -> usize {
    epochs * n.div_ceil(batch_size)
}

/// Mean per-utterance loss without gradients.
pub fn mean_loss(system: &System, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("loss split".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let mut g = Graph::new();
        let l = system.loss(&mut g, &ex.input, &ex.tokens)?;
        total += g.value(l).data()[0] as f64;
    }
    Ok(total / examples.len() as f64)
}

pub fn evaluate_examples(system: &System, examples: &[Example]) -> Result<SplitReport> {
    let items: Vec<EvalItem> = examples.iter().map(Example::eval_item).collect();
    evaluate_split(system, &items)
}

/// Scales every group's gradient by one common factor so the global norm
/// is at most `max_norm`.
fn clip_global(groups: &mut [&mut ParameterSet<f32>], max_norm: f64) {
    let norms: Vec<f64> = groups.iter().map(|p| p.grad_norm()).collect();
    let total = norms.iter().map(|n| n * n).sum::<f64>().sqrt();
    if total > max_norm && total > 0.0 {
        for (p, n) in groups.iter_mut().zip(norms) {
            p.clip_grad_norm(n * max_norm / total);
        }
    }
}

fn frozen_unchanged(before: &ParameterSet<f32>, after: &ParameterSet<f32>) -> bool {
    before.iter().zip(after.iter()).all(|((_, a), (_, b))| {
        a.trainable || a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

/// Teacher-forced training with per-epoch validation loss, periodic
/// validation WER, early stopping and best-validation-loss selection.
/// On return `system` holds the selected parameters.
pub fn train_run(system: &mut System, data: &FoldData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Empty("training or validation split".into()));
    }
    let lm_before = system.lm.params.clone();
    let opt = AdamW { weight_decay: cfg.weight_decay, ..AdamW::default() };
    let n_batches = data.train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_run(data.train.len(), cfg.batch_size, cfg.max_epochs);
    let untrained_val_loss = mean_loss(system, &data.val)?;
    let mut history = vec![EpochRecord { epoch: 0, split: "val".into(), loss: untrained_val_loss, wer: None }];
    let mut best = (0usize, untrained_val_loss, system.clone());
    let mut step = 0usize;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng_indexed(cfg.seed, "epoch", epoch as u64));
        let mut train_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            for p in system.groups_mut() {
                p.zero_grad();
            }
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let ex = &data.train[i];
                let mut g = Graph::new();
                let loss = system.loss(&mut g, &ex.input, &ex.tokens)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step, batch: b });
                }
                train_loss += value as f64;
                let grads = g.backward(loss)?;
                for p in system.groups_mut() {
                    if p.count(true) > 0 {
                        p.accumulate(&g, &grads, scale);
                    }
                }
            }
            let mut groups: Vec<&mut ParameterSet<f32>> =
                system.groups_mut().into_iter().filter(|p| p.count(true) > 0).collect();
            clip_global(&mut groups, cfg.clip_norm);
            let lr = warmup_linear_decay(step, total_steps, cfg.lr_max, cfg.warmup_frac, cfg.final_lr_frac);
            for p in groups {
                opt.step(p, lr)?;
            }
            step += 1;
        }
        debug_assert_eq!(step, epoch * n_batches);
        epochs_run = epoch;
        history.push(EpochRecord { epoch, split: "train".into(), loss: train_loss / data.train.len() as f64, wer: None });
        let val_loss = mean_loss(system, &data.val)?;
        let decode = epoch % cfg.val_wer_every == 0;
        let val_wer = if decode { Some(evaluate_examples(system, &data.val)?.wer) } else { None };
        history.push(EpochRecord { epoch, split: "val".into(), loss: val_loss, wer: val_wer });
        log::info!(
            "epoch {epoch}: train {:.4} val {val_loss:.4}{}",
            train_loss / data.train.len() as f64,
            val_wer.map(|w| format!(" wer {w:.3}")).unwrap_or_default()
        );
        if val_loss < best.1 {
            best = (epoch, val_loss, system.clone());
        }
        let reached = matches!((val_wer, cfg.target_val_wer), (Some(w), Some(t)) if w <= t);
        if reached || epoch - best.0 >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val_loss, selected) = best;
    *system = selected;
    if !frozen_unchanged(&lm_before, &system.lm.params) {
        return Err(Error::param("lm", "frozen language-model weights changed during training"));
    }
    let best_val_wer = evaluate_examples(system, &data.val)?.wer;
    Ok(TrainOutcome { history, untrained_val_loss, best_epoch, best_val_loss, best_val_wer, epochs_run, steps: step })
}

pub fn write_history_csv(path: &Path, run_id: &str, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("run_id,epoch,split,loss,wer\n");
    for r in history {
        let wer = r.wer.map(|w| format!("{w:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{run_id},{},{},{:.6},{wer}", r.epoch, r.split, r.loss);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
