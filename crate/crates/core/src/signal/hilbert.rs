use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Analytic signal: forward FFT, zero the negative frequencies, double the
/// positive ones (DC and Nyquist kept once), inverse FFT.
pub fn hilbert_analytic(x: &[f64]) -> Result<Vec<Complex<f64>>> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooShort { len: n, min: 4 });
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, b) in buf.iter_mut().enumerate() {
        let keep_once = k == 0 || (n % 2 == 0 && k == half);
        if keep_once {
            continue;
        }
        if k <= (n - 1) / 2 {
            *b *= 2.0;
        } else {
            *b = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.into_iter().map(|v| v * scale).collect())
}
