use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ablation::{Experiment, Variant};
use crate::corpus::{subsample_minutes, Fold};
use crate::decode_eval::mean_std;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Requested training budget.
    pub minutes: f64,
    /// Mean over folds of the minutes actually used.
    pub train_minutes: f64,
    pub train_utterances: f64,
    pub wer_mean: f64,
    pub wer_std: f64,
}

/// Trains `variant` on growing training-time budgets; validation and test
/// splits stay fixed per fold.
pub fn data_efficiency_sweep(exp: &Experiment, variant: &Variant, minutes: &[f64], folds: &[Fold]) -> Result<Vec<CurvePoint>> {
    if minutes.is_empty() || folds.is_empty() {
        return Err(Error::Empty("sweep budgets or folds".into()));
    }
    if minutes.windows(2).any(|w| !(w[0] <= w[1])) || minutes.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::param("minutes", "budgets must be positive and sorted ascending"));
    }
    let mut out = Vec::new();
    for &budget in minutes {
        let mut wers = Vec::new();
        let (mut used, mut count) = (0.0, 0.0);
        for fold in folds {
            let train = subsample_minutes(&fold.train, exp.manifest, budget, exp.train.seed)?;
            let secs: f64 = exp.manifest.select(&train).iter().map(|u| u.recording.duration_s()).sum();
            used += secs / 60.0 / folds.len() as f64;
            count += train.len() as f64 / folds.len() as f64;
            let sub = Fold { train, ..fold.clone() };
            wers.push(exp.run_fold(variant, &sub)?.test.wer);
        }
        let (wer_mean, wer_std) = mean_std(&wers);
        log::info!("budget {budget} min: wer {wer_mean:.3} ± {wer_std:.3}");
        out.push(CurvePoint { minutes: budget, train_minutes: used, train_utterances: count, wer_mean, wer_std });
    }
    Ok(out)
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("minutes,train_minutes,train_utterances,wer_mean,wer_std\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.4},{},{:.6},{:.6}",
            p.minutes, p.train_minutes, p.train_utterances, p.wer_mean, p.wer_std
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
