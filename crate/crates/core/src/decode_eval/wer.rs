use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word-level edit operations of a minimum-cost alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment; among minimum-cost alignments prefers
/// substitutions, then deletions.
pub fn edit_counts<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    // (cost, subs, dels, ins) per cell, two rows at a time.
    let mut prev: Vec<(usize, EditCounts)> =
        (0..=m).map(|j| (j, EditCounts { insertions: j, ..EditCounts::default() })).collect();
    for i in 1..=n {
        let mut cur = vec![(i, EditCounts { deletions: i, ..EditCounts::default() }); m + 1];
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let (dc, mut diag) = prev[j - 1];
            let diag_cost = dc + usize::from(!same);
            if !same {
                diag.substitutions += 1;
            }
            let (uc, mut up) = prev[j];
            up.deletions += 1;
            let (lc, mut left) = cur[j - 1];
            left.insertions += 1;
            cur[j] = if diag_cost <= uc + 1 && diag_cost <= lc + 1 {
                (diag_cost, diag)
            } else if uc + 1 <= lc + 1 {
                (uc + 1, up)
            } else {
                (lc + 1, left)
            };
        }
        prev = cur;
    }
    prev[m].1
}

/// (S + D + I) / |reference|; may exceed 1.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("WER reference".into()));
    }
    Ok(edit_counts(reference, hypothesis).errors() as f64 / reference.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
