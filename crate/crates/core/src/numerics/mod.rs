//! Dense tensors, reverse-mode autodiff and the optimizer.

mod element;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use element::{gemm, Element};
pub use gradcheck::finite_difference_gradient;
pub use graph::{Gradients, Graph, Var};
pub use kernels::{ConvGeom, Padding};
pub use optim::{adamw_step, warmup_linear_decay, AdamW};
pub use params::{ParamId, Parameter, ParameterSet};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Standalone convolution (no tape): `x [T x C_in]`, `kernel [K x C_in x C_out]`.
pub fn conv1d<E: Element>(
    x: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    padding: Padding,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    let mut g = Graph::new();
    let xv = g.input(x.clone(), false);
    let wv = g.input(kernel.clone(), false);
    let bv = bias.map(|b| g.input(b.clone(), false));
    let y = g.conv1d(xv, wv, bv, stride, padding)?;
    Ok(g.value(y).clone())
}

/// Elementwise exact GeLU.
pub fn gelu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    x.map(kernels::gelu)
}

/// `softmax(z / tau)` over a single vector.
pub fn softmax_temperature<E: Element>(z: &[E], tau: E) -> Result<Vec<E>> {
    if tau <= E::zero() {
        return Err(Error::param("tau", format!("temperature must be positive, got {tau}")));
    }
    if z.is_empty() {
        return Err(Error::Empty("softmax over an empty vector".into()));
    }
    Ok(kernels::softmax_rows(z, z.len(), tau))
}

/// Backward pass that writes gradients of `loss` into `params`.
pub fn backward<E: Element>(graph: &Graph<E>, loss: Var, params: &mut ParameterSet<E>) -> Result<()> {
    let grads = graph.backward(loss)?;
    params.accumulate(graph, &grads, E::one());
    Ok(())
}
