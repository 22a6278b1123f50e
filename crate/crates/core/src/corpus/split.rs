use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::CorpusManifest;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// One train/val/test assignment. Ids keep corpus order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Shuffles the utterances once, then gives fold `f` the `f`-th contiguous
/// test block of the shuffled order. The validation block follows the test
/// block cyclically, so test sets are pairwise disjoint across folds.
pub fn split_folds(manifest: &CorpusManifest, ratios: (f64, f64, f64), k: usize, seed: u64) -> Result<Vec<Fold>> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(r.is_finite() && *r >= 0.0)) || !(a + b + c > 0.0) {
        return Err(Error::param("ratios", format!("need non-negative ratios with a positive sum, got {ratios:?}")));
    }
    if k == 0 {
        return Err(Error::param("k", "must be >= 1"));
    }
    let total = a + b + c;
    let (val_frac, test_frac) = (b / total, c / total);
    if k as f64 * test_frac > 1.0 + 1e-9 {
        return Err(Error::param("k", format!("{k} folds x test fraction {test_frac} exceeds 1")));
    }
    let n = manifest.len();
    let n_test = (n as f64 * test_frac).round() as usize;
    let n_val = ((n as f64 * val_frac).round() as usize).min(n - n_test.min(n));
    if k * n_test > n {
        return Err(Error::param("k", format!("{k} test blocks of {n_test} exceed {n} utterances")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, "folds"));

    let ids = manifest.ids();
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        // 0 = train, 1 = val, 2 = test
        let mut role = vec![0u8; n];
        for j in 0..n_test {
            role[order[f * n_test + j]] = 2;
        }
        for j in 0..n_val {
            role[order[((f + 1) * n_test + j) % n]] = 1;
        }
        let pick = |r: u8| (0..n).filter(|&i| role[i] == r).map(|i| ids[i].clone()).collect::<Vec<_>>();
        folds.push(Fold { train: pick(0), val: pick(1), test: pick(2) });
    }
    Ok(folds)
}

/// Greedy random accumulation: walks the ids in a seeded random order and
/// keeps every utterance that still fits the budget. Returns ids in their
/// input order. If not even one utterance fits, the shortest is returned.
pub fn subsample_minutes(train_ids: &[String], manifest: &CorpusManifest, minutes: f64, seed: u64) -> Result<Vec<String>> {
    if train_ids.is_empty() {
        return Err(Error::Empty("train set for subsampling".into()));
    }
    if !(minutes > 0.0) {
        return Err(Error::param("minutes", format!("must be positive, got {minutes}")));
    }
    let durations: HashMap<&str, f64> =
        manifest.utterances.iter().map(|u| (u.id(), u.recording.duration_s() / 60.0)).collect();
    let dur = |id: &String| -> Result<f64> {
        durations
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::param("train_ids", format!("unknown utterance `{id}`")))
    };
    let total = train_ids.iter().map(dur).sum::<Result<f64>>()?;
    if minutes >= total {
        return Ok(train_ids.to_vec());
    }
    let mut order: Vec<usize> = (0..train_ids.len()).collect();
    order.shuffle(&mut rng_for(seed, "subsample"));
    let mut keep = vec![false; train_ids.len()];
    let mut acc = 0.0;
    for &i in &order {
        let d = dur(&train_ids[i])?;
        if acc + d <= minutes {
            acc += d;
            keep[i] = true;
        }
    }
    if acc == 0.0 {
        let shortest = (0..train_ids.len())
            .min_by(|&x, &y| dur(&train_ids[x]).unwrap().total_cmp(&dur(&train_ids[y]).unwrap()))
            .expect("non-empty");
        log::warn!("budget of {minutes} min is below every utterance; keeping `{}`", train_ids[shortest]);
        keep[shortest] = true;
    }
    Ok(train_ids.iter().zip(keep).filter(|(_, k)| *k).map(|(id, _)| id.clone()).collect())
}
