use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate_examples, prepare_fold, train_run, FeatureCache, InputConfig, System, TrainConfig, TrainOutcome};
use crate::adaptor::{AdaptorConfig, Backbone};
use crate::corpus::{CorpusManifest, Fold};
use crate::decode_eval::{mean_std, DecodeConfig, SplitReport};
use crate::error::{Error, Result};
use crate::lm::{LoraConfig, PromptTemplate, TinyLm, Vocabulary};
use crate::objective::LossSpec;

/// One adaptor/loss configuration to train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub adaptor: AdaptorConfig,
    pub loss: LossSpec,
    #[serde(default)]
    pub lora: Option<LoraConfig>,
}

/// Shared inputs of every run in an ablation or sweep.
#[derive(Clone, Copy)]
pub struct Experiment<'a> {
    pub manifest: &'a CorpusManifest,
    pub lm: &'a TinyLm<f32>,
    pub vocab: &'a Vocabulary,
    pub template: &'a PromptTemplate,
    pub input: &'a InputConfig,
    pub cache: Option<&'a FeatureCache>,
    pub decode: &'a DecodeConfig,
    pub train: &'a TrainConfig,
}

/// Outcome of one variant on one fold.
pub struct FoldRun {
    pub system: System,
    pub outcome: TrainOutcome,
    pub val: SplitReport,
    pub test: SplitReport,
}

impl Experiment<'_> {
    /// Trains `variant` on `fold` and evaluates the selected parameters on
    /// the validation and test splits.
    pub fn run_fold(&self, variant: &Variant, fold: &Fold) -> Result<FoldRun> {
        let data = prepare_fold(self.manifest, fold, self.input, self.cache, self.vocab)?;
        let mut system = System::new(
            &variant.adaptor,
            self.lm.clone(),
            variant.lora.clone(),
            &variant.loss,
            self.decode,
            self.template,
            self.vocab,
            data.norm.clone(),
            self.train.seed,
        )?;
        let outcome = train_run(&mut system, &data, self.train)?;
        let val = evaluate_examples(&system, &data.val)?;
        let test = evaluate_examples(&system, &data.test)?;
        Ok(FoldRun { system, outcome, val, test })
    }
}

/// The architecture and objective comparisons: fully connected, residual
/// blocks alone, residual blocks with each sequence backbone, and CTC.
/// `base` fixes the input width, widths and overall downsampling.
pub fn default_suite(base: &AdaptorConfig) -> Vec<Variant> {
    let with = |name: &str, adaptor: AdaptorConfig, loss: LossSpec| Variant { name: name.into(), adaptor, loss, lora: None };
    let ce = LossSpec::default();
    let resblock = |backbone| AdaptorConfig { res_blocks: 2, backbone, ..base.clone() };
    // Same total downsampling without residual blocks.
    let fc_stride = base.downsample_factor() / base.tail_stride.max(1);
    vec![
        with("fc", AdaptorConfig { res_blocks: 0, stem_stride: fc_stride, backbone: Backbone::NoneFc, ..base.clone() }, ce.clone()),
        with("resblock", resblock(Backbone::NoneFc), ce.clone()),
        with("resblock+transformer_sin", resblock(Backbone::TransformerSin), ce.clone()),
        with("resblock+bilstm", resblock(Backbone::Bilstm), ce.clone()),
        with("resblock+bilstm/ctc", resblock(Backbone::Bilstm), LossSpec::ctc()),
        with("resblock+lstm", resblock(Backbone::Lstm), ce.clone()),
        with("resblock+transformer_rope", resblock(Backbone::TransformerRope), ce),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub trainable_params: usize,
    pub wer_mean: f64,
    pub wer_std: f64,
    /// Mean over folds of the validation loss before training.
    pub untrained_val_loss: f64,
    /// Mean over folds of the selected validation loss.
    pub final_val_loss: f64,
    /// `None` when the variant trained; otherwise the error.
    pub failure: Option<String>,
}

fn run_variant(exp: &Experiment, variant: &Variant, folds: &[Fold]) -> Result<AblationRow> {
    let mut wers = Vec::new();
    let (mut untrained, mut fin) = (0.0, 0.0);
    let mut params = 0;
    for fold in folds {
        let run = exp.run_fold(variant, fold)?;
        params = run.system.trainable_params();
        wers.push(run.test.wer);
        untrained += run.outcome.untrained_val_loss / folds.len() as f64;
        fin += run.outcome.best_val_loss / folds.len() as f64;
    }
    let (wer_mean, wer_std) = mean_std(&wers);
    Ok(AblationRow {
        variant: variant.name.clone(),
        trainable_params: params,
        wer_mean,
        wer_std,
        untrained_val_loss: untrained,
        final_val_loss: fin,
        failure: None,
    })
}

/// Trains every variant under the same folds and seed. A variant that
/// fails becomes a row with its error and the suite continues.
pub fn run_ablation(exp: &Experiment, suite: &[Variant], folds: &[Fold]) -> Result<Vec<AblationRow>> {
    if suite.is_empty() || folds.is_empty() {
        return Err(Error::Empty("ablation suite or folds".into()));
    }
    Ok(suite
        .iter()
        .map(|v| {
            log::info!("ablation variant {}", v.name);
            run_variant(exp, v, folds).unwrap_or_else(|e| {
                log::warn!("variant {} failed: {e}", v.name);
                AblationRow {
                    variant: v.name.clone(),
                    trainable_params: 0,
                    wer_mean: f64::NAN,
                    wer_std: f64::NAN,
                    untrained_val_loss: f64::NAN,
                    final_val_loss: f64::NAN,
                    failure: Some(format!("{}: {e}", e.class())),
                }
            })
        })
        .collect())
}

/// Writes `<stem>.csv` and an aligned `<stem>.txt`.
pub fn write_ablation_table(dir: &Path, stem: &str, rows: &[AblationRow]) -> Result<()> {
    let mut csv = String::from("variant,trainable_params,wer_mean,wer_std,untrained_val_loss,final_val_loss,status\n");
    for r in rows {
        let status = r.failure.as_deref().map(|f| format!("failed: {}", f.replace(',', ";"))).unwrap_or("ok".into());
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6},{status}",
            r.variant, r.trainable_params, r.wer_mean, r.wer_std, r.untrained_val_loss, r.final_val_loss
        );
    }
    let width = rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    let mut txt = format!("{:<width$}  {:>10}  {:>15}  {:>9}  {:>9}\n", "variant", "params", "WER", "val0", "val");
    for r in rows {
        let wer = match &r.failure {
            None => format!("{:.2} ± {:.2}", r.wer_mean, r.wer_std),
            Some(_) => "failed".into(),
        };
        let _ = writeln!(
            txt,
            "{:<width$}  {:>10}  {:>15}  {:>9.3}  {:>9.3}",
            r.variant, r.trainable_params, wer, r.untrained_val_loss, r.final_val_loss
        );
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let txt_path = dir.join(format!("{stem}.txt"));
    fs::write(&txt_path, txt).map_err(|e| Error::io(&txt_path, e))
}
