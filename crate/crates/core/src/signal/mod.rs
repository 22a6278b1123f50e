//! Preprocessing, framing, handcrafted features and augmentations.

mod augment;
mod cache;
mod features;
mod hilbert;

pub use augment::{augment_channel_shift, augment_hilbert_phase, Phase};
pub use cache::{load_features, save_features, FeatureSidecar};
pub use features::{extract_features, feature_names, zero_crossings, FeatureSequence, FeatureStats, FrameSpec, FEATURES_PER_CHANNEL};
pub use hilbert::hilbert_analytic;

use serde::{Deserialize, Serialize};

use crate::corpus::EmgRecording;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-channel standardization statistics, fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Pools DC-removed, resampled training recordings.
    pub fn fit(train: &[&EmgRecording], target_rate: f64) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::Empty("no recordings to fit statistics".into()))?;
        let c = first.channels();
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        let mut n = 0usize;
        for r in train {
            let x = preprocess(r, target_rate, None)?;
            if x.channels() != c {
                return Err(Error::shape("ChannelStats::fit", format!("{} vs {c} channels", x.channels())));
            }
            for row in x.signal.data().chunks_exact(c) {
                for (ch, &v) in row.iter().enumerate() {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
            n += x.samples();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-8)).collect();
        Ok(Self { mean, std })
    }
}

/// Linear-interpolation resampling of one `[T x C]` signal.
fn resample(x: &Tensor<f32>, from: f64, to: f64) -> Tensor<f32> {
    let (t, c) = (x.rows(), x.cols());
    let t_out = ((t as f64 * to / from).round() as usize).max(1);
    if t_out == t && from == to {
        return x.clone();
    }
    let src = x.data();
    let mut out = vec![0.0f32; t_out * c];
    for i in 0..t_out {
        let pos = (i as f64 * from / to).min((t - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(t - 1);
        let w = pos - i0 as f64;
        for ch in 0..c {
            out[i * c + ch] = ((1.0 - w) * src[i0 * c + ch] as f64 + w * src[i1 * c + ch] as f64) as f32;
        }
    }
    Tensor::new(vec![t_out, c], out).expect("consistent shape")
}

/// Removes the per-channel mean, resamples linearly to `target_rate` and,
/// given statistics, standardizes each channel.
pub fn preprocess(recording: &EmgRecording, target_rate: f64, stats: Option<&ChannelStats>) -> Result<EmgRecording> {
    if !(target_rate > 0.0) {
        return Err(Error::param("target_rate", format!("must be positive, got {target_rate}")));
    }
    if !recording.signal.is_finite() {
        return Err(Error::param("recording", format!("`{}` has non-finite samples", recording.utterance_id)));
    }
    let (t, c) = (recording.samples(), recording.channels());
    if t == 0 {
        return Err(Error::Empty(format!("recording `{}`", recording.utterance_id)));
    }
    let mut x = recording.signal.clone();
    for ch in 0..c {
        let mean = (0..t).map(|i| x.data()[i * c + ch] as f64).sum::<f64>() / t as f64;
        for i in 0..t {
            let v = &mut x.data_mut()[i * c + ch];
            *v = (*v as f64 - mean) as f32;
        }
    }
    let mut x = resample(&x, recording.sample_rate, target_rate);
    if let Some(s) = stats {
        if s.mean.len() != c || s.std.len() != c {
            return Err(Error::shape("preprocess", format!("statistics for {} channels, signal has {c}", s.mean.len())));
        }
        for row in x.data_mut().chunks_exact_mut(c) {
            for (ch, v) in row.iter_mut().enumerate() {
                *v = ((*v as f64 - s.mean[ch]) / s.std[ch]) as f32;
            }
        }
    }
    Ok(EmgRecording { signal: x, sample_rate: target_rate, ..recording.clone() })
}
