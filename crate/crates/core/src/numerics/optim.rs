use serde::{Deserialize, Serialize};

use super::{Element, ParameterSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamW {
    /// One decoupled-weight-decay Adam update of every trainable parameter.
    ///
    /// Decay multiplies the parameter by `1 - lr * weight_decay` before the
    /// bias-corrected moment update. Frozen parameters are never touched.
    pub fn step<E: Element>(&self, params: &mut ParameterSet<E>, lr: f64) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        let t = params.bump_step() as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (E::from_f64_lossy(self.beta1), E::from_f64_lossy(self.beta2));
        let (ob1, ob2) = (E::one() - b1, E::one() - b2);
        let decay = E::from_f64_lossy(1.0 - lr * self.weight_decay);
        let step = E::from_f64_lossy(lr / bc1);
        let inv_bc2 = E::from_f64_lossy(1.0 / bc2);
        let eps = E::from_f64_lossy(self.eps);
        for p in params.params_mut().iter_mut().filter(|p| p.trainable) {
            let grad = p.grad.as_ref().expect("checked above");
            let (value, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
            for i in 0..value.len() {
                let g = grad.data()[i];
                m[i] = b1 * m[i] + ob1 * g;
                v[i] = b2 * v[i] + ob2 * g * g;
                let denom = (v[i] * inv_bc2).sqrt() + eps;
                value[i] = value[i] * decay - step * m[i] / denom;
            }
        }
        Ok(())
    }
}

/// Convenience wrapper matching the free-function form.
pub fn adamw_step<E: Element>(
    params: &mut ParameterSet<E>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    AdamW { beta1, beta2, eps, weight_decay }.step(params, lr)
}

/// Learning rate at optimizer step `step` (0-based) out of `total`: linear
/// warmup over the first `warmup_frac` of steps, then linear decay to
/// `base * final_frac` at the last step.
pub fn warmup_linear_decay(step: usize, total: usize, base: f64, warmup_frac: f64, final_frac: f64) -> f64 {
    let total = total.max(1);
    let warm = ((total as f64 * warmup_frac).round() as usize).min(total);
    if step < warm {
        return base * (step + 1) as f64 / warm as f64;
    }
    let span = (total - warm).max(1) as f64;
    let progress = ((step - warm) as f64 / span).min(1.0);
    base * (1.0 - (1.0 - final_frac) * progress)
}
