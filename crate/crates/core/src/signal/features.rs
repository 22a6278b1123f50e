use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::EmgRecording;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// 5 temporal + 9 spectral values per channel.
pub const FEATURES_PER_CHANNEL: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSpec {
    pub frame_length: usize,
    pub hop: usize,
    pub stft_size: usize,
    pub lowpass_window: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self { frame_length: 26, hop: 8, stft_size: 16, lowpass_window: 9 }
    }
}

impl FrameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stft_size != 16 {
            return Err(Error::param("stft_size", format!("fixed at 16, got {}", self.stft_size)));
        }
        if self.frame_length < self.stft_size {
            return Err(Error::param("frame_length", format!("{} < stft size {}", self.frame_length, self.stft_size)));
        }
        if self.hop == 0 {
            return Err(Error::param("hop", "must be >= 1"));
        }
        if self.lowpass_window % 2 == 0 {
            return Err(Error::param("lowpass_window", format!("must be odd, got {}", self.lowpass_window)));
        }
        Ok(())
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.frame_length {
            0
        } else {
            (samples - self.frame_length) / self.hop + 1
        }
    }

    /// Offset of the DFT window inside a frame (centered).
    fn dft_offset(&self) -> usize {
        (self.frame_length - self.stft_size) / 2
    }
}

/// `frames [T_f x 14C]`; column `14 * ch + k` holds feature `k` of channel `ch`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor<f32>,
    pub frame_rate: f64,
    pub channels: usize,
}

impl FeatureSequence {
    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Column names in layout order.
pub fn feature_names(channels: usize) -> Vec<String> {
    const TEMPORAL: [&str; 5] = ["low_mean", "low_power", "high_power", "high_rect_mean", "high_zero_crossings"];
    let mut out = Vec::with_capacity(channels * FEATURES_PER_CHANNEL);
    for ch in 0..channels {
        out.extend(TEMPORAL.iter().map(|n| format!("ch{ch}_{n}")));
        out.extend((0..9).map(|b| format!("ch{ch}_dft{b}")));
    }
    out
}

/// Counts adjacent pairs with strictly opposite sign. A zero takes the sign
/// of the last nonzero sample before it; leading zeros count as positive.
pub fn zero_crossings(x: &[f64]) -> usize {
    let mut prev_positive = true;
    let mut count = 0;
    for (i, &v) in x.iter().enumerate() {
        let positive = if v > 0.0 {
            true
        } else if v < 0.0 {
            false
        } else {
            prev_positive
        };
        if i > 0 && positive != prev_positive {
            count += 1;
        }
        prev_positive = positive;
    }
    count
}

/// Centered moving average with clamped edges.
fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let r = (window / 2) as isize;
    (0..n)
        .map(|i| (-r..=r).map(|d| x[(i + d).clamp(0, n - 1) as usize]).sum::<f64>() / window as f64)
        .collect()
}

struct Extractor {
    spec: FrameSpec,
    fft: Arc<dyn Fft<f64>>,
}

impl Extractor {
    fn new(spec: FrameSpec) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(spec.stft_size);
        Self { spec, fft }
    }

    /// Writes the 14 features of one frame into `out`.
    fn frame(&self, raw: &[f64], low: &[f64], out: &mut [f32], buf: &mut [Complex<f64>]) {
        let n = raw.len() as f64;
        let mut low_mean = 0.0;
        let mut low_pow = 0.0;
        let mut high_pow = 0.0;
        let mut high_rect = 0.0;
        let mut high = Vec::with_capacity(raw.len());
        for (&x, &l) in raw.iter().zip(low) {
            let h = x - l;
            low_mean += l;
            low_pow += l * l;
            high_pow += h * h;
            high_rect += h.abs();
            high.push(h);
        }
        out[0] = (low_mean / n) as f32;
        out[1] = (low_pow / n) as f32;
        out[2] = (high_pow / n) as f32;
        out[3] = (high_rect / n) as f32;
        out[4] = zero_crossings(&high) as f32;
        let off = self.spec.dft_offset();
        for (b, &x) in buf.iter_mut().zip(&raw[off..off + self.spec.stft_size]) {
            *b = Complex::new(x, 0.0);
        }
        self.fft.process(buf);
        for k in 0..9 {
            out[5 + k] = buf[k].norm() as f32;
        }
    }
}

/// Frames a preprocessed recording into `[T_f x 14C]` features.
///
/// Per channel, the low-frequency component is a moving average of width
/// `lowpass_window` applied twice over the whole signal and the high-frequency
/// component is the residual. Per frame: low mean, low power, high power,
/// rectified high mean, high zero crossings, then DFT magnitudes of bins 0..8
/// of the 16 raw samples centered in the frame.
pub fn extract_features(recording: &EmgRecording, spec: &FrameSpec) -> Result<FeatureSequence> {
    spec.validate()?;
    let (t, c) = (recording.samples(), recording.channels());
    if t < spec.frame_length {
        return Err(Error::ShorterThanFrame { len: t, frame_length: spec.frame_length });
    }
    let n_frames = spec.frame_count(t);
    let d = c * FEATURES_PER_CHANNEL;
    let mut frames = vec![0.0f32; n_frames * d];
    let ex = Extractor::new(*spec);
    let mut buf = vec![Complex::new(0.0, 0.0); spec.stft_size];
    let data = recording.signal.data();
    for ch in 0..c {
        let raw: Vec<f64> = (0..t).map(|i| data[i * c + ch] as f64).collect();
        let low = moving_average(&moving_average(&raw, spec.lowpass_window), spec.lowpass_window);
        for f in 0..n_frames {
            let s = f * spec.hop;
            let e = s + spec.frame_length;
            let out = &mut frames[f * d + ch * FEATURES_PER_CHANNEL..f * d + (ch + 1) * FEATURES_PER_CHANNEL];
            ex.frame(&raw[s..e], &low[s..e], out, &mut buf);
        }
    }
    Ok(FeatureSequence {
        frames: Tensor::new(vec![n_frames, d], frames)?,
        frame_rate: recording.sample_rate / spec.hop as f64,
        channels: c,
    })
}

/// Per-dimension feature standardization, fitted on training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(train: &[&FeatureSequence]) -> Result<Self> {
        let d = train.first().ok_or_else(|| Error::Empty("no feature sequences to fit".into()))?.dim();
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        let mut n = 0usize;
        for f in train {
            if f.dim() != d {
                return Err(Error::shape("FeatureStats::fit", format!("dimension {} vs {d}", f.dim())));
            }
            for row in f.frames.data().chunks_exact(d) {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += (v as f64) * (v as f64);
                }
            }
            n += f.len();
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, f: &FeatureSequence) -> Result<FeatureSequence> {
        let d = f.dim();
        if d != self.mean.len() {
            return Err(Error::shape("FeatureStats::apply", format!("dimension {d} vs {}", self.mean.len())));
        }
        let mut out = f.clone();
        for row in out.frames.data_mut().chunks_exact_mut(d) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((*v as f64 - self.mean[j]) / self.std[j]) as f32;
            }
        }
        Ok(out)
    }
}
