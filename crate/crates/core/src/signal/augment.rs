use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::corpus::EmgRecording;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Fixed(f64),
    /// Uniform on [0, 2pi), drawn per channel.
    Random,
}

/// Rotates one channel: `Re(analytic(x) * e^{i theta})`. DC and Nyquist
/// have no phase and are left untouched, so `|analytic|` is preserved
/// exactly when they carry no energy.
fn rotate(x: &[f64], theta: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let rot = Complex::from_polar(1.0, theta);
    for k in 1..n.div_ceil(2) {
        buf[k] *= rot;
        buf[n - k] = buf[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|v| v.re / n as f64).collect()
}

pub fn augment_hilbert_phase(recording: &EmgRecording, theta: Phase, seed: u64) -> Result<EmgRecording> {
    let (t, c) = (recording.samples(), recording.channels());
    let mut rng = rng_for(seed, "hilbert-phase");
    let mut planner = FftPlanner::new();
    let mut out = recording.clone();
    for ch in 0..c {
        let th = match theta {
            Phase::Fixed(v) => v,
            Phase::Random => rng.random_range(0.0..2.0 * PI),
        };
        if th == 0.0 || t < 2 {
            continue;
        }
        let x: Vec<f64> = (0..t).map(|i| recording.signal.data()[i * c + ch] as f64).collect();
        let y = rotate(&x, th, &mut planner);
        for (i, v) in y.into_iter().enumerate() {
            out.signal.data_mut()[i * c + ch] = v as f32;
        }
    }
    Ok(out)
}

/// Shifts every channel by its own integer offset in
/// `[-max_shift, max_shift]`, repeating the boundary sample.
pub fn augment_channel_shift(recording: &EmgRecording, max_shift: usize, seed: u64) -> Result<EmgRecording> {
    let (t, c) = (recording.samples(), recording.channels());
    if 4 * max_shift >= t.max(1) && max_shift > 0 {
        return Err(Error::param("max_shift", format!("{max_shift} must be below T/4 = {}", t as f64 / 4.0)));
    }
    if max_shift == 0 {
        return Ok(recording.clone());
    }
    let mut rng = rng_for(seed, "channel-shift");
    let shifts: Vec<isize> = (0..c).map(|_| rng.random_range(-(max_shift as i64)..=max_shift as i64) as isize).collect();
    Ok(shift_channels(recording, &shifts))
}

/// `out[t] = x[clamp(t - s)]` per channel.
pub(crate) fn shift_channels(recording: &EmgRecording, shifts: &[isize]) -> EmgRecording {
    let (t, c) = (recording.samples(), recording.channels());
    let src = recording.signal.data();
    let mut out = recording.clone();
    let dst = out.signal.data_mut();
    for (ch, &s) in shifts.iter().enumerate() {
        for i in 0..t {
            let j = (i as isize - s).clamp(0, t as isize - 1) as usize;
            dst[i * c + ch] = src[j * c + ch];
        }
    }
    out
}
