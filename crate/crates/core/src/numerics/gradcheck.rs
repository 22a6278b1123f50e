use std::cell::RefCell;

use super::{Element, Graph, Tensor, Var};
use crate::error::Result;

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_gradient<E: Element>(f: impl Fn(&Tensor<E>) -> E, x: &Tensor<E>, eps: E) -> Tensor<E> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    let two = E::one() + E::one();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let lo = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (hi - lo) / (two * eps);
    }
    out
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
///
/// The floor keeps coordinates whose true derivative is essentially zero
/// from dominating the comparison; it acts as an absolute tolerance of
/// `floor * rtol` there.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over matching entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for every input tensor; returns the largest relative error
/// (floor `1e-4`, step `1e-5`).
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone(), true)).collect();
        let loss = f(&mut g, &vars)?;
        Ok((g, vars, loss))
    };
    let (g, vars, loss) = eval(inputs)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; x.numel()]);
        let failed = RefCell::new(None);
        let numeric = finite_difference_gradient(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[i] = probe.clone();
                match eval(&xs) {
                    Ok((g, _, l)) => g.value(l).data()[0],
                    Err(e) => {
                        failed.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            x,
            1e-5,
        );
        if let Some(e) = failed.into_inner() {
            return Err(e);
        }
        worst = worst.max(max_relative_error(&analytic, numeric.data(), 1e-4));
    }
    Ok(worst)
}
