use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::graph::{Gradients, Graph};
use super::{Element, Tensor};
use crate::error::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
    pub grad: Option<Tensor<E>>,
    /// First AdamW moment.
    pub m: Tensor<E>,
    /// Second AdamW moment.
    pub v: Tensor<E>,
}

/// Named parameters with trainable flags and optimizer state.
#[derive(Clone, Debug)]
pub struct ParameterSet<E> {
    uid: u64,
    params: Vec<Parameter<E>>,
    by_name: BTreeMap<String, usize>,
    step: u64,
}

impl<E: Element> Default for ParameterSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParameterSet<E> {
    pub fn new() -> Self {
        Self {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            by_name: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<E>, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::param(name, "duplicate parameter name"));
        }
        let shape = value.shape().to_vec();
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id.0);
        self.params.push(Parameter {
            name,
            value,
            trainable,
            grad: None,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<E> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<E> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<E>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<E>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter<E>] {
        &mut self.params
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
        if !trainable {
            self.params[id.0].grad = None;
        }
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
            p.grad = None;
        }
    }

    /// Number of scalar parameters, optionally restricted to trainable ones.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.params.iter().filter(|p| !trainable_only || p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds `scale * dL/dp` for every trainable parameter of this set that
    /// appears on `graph`.
    pub fn accumulate(&mut self, graph: &Graph<E>, grads: &Gradients<E>, scale: E) {
        for (var, set, index) in graph.param_leaves() {
            if set != self.uid {
                continue;
            }
            let p = &mut self.params[index];
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(var) else { continue };
            let acc = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for (a, &b) in acc.data_mut().iter_mut().zip(g) {
                *a += b * scale;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .map(|g| g.sq_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = E::from_f64_lossy(max_norm / norm);
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    /// Same parameters at another precision; gradients are dropped.
    pub fn cast<F: Element>(&self) -> ParameterSet<F> {
        let mut out = ParameterSet::<F>::new();
        for p in &self.params {
            let id = out.add(p.name.clone(), p.value.cast(), p.trainable).expect("unique names");
            let q = out.get_mut(id);
            q.m = p.m.cast();
            q.v = p.v.cast();
        }
        out.step = self.step;
        out
    }

    /// True when every value tensor is bitwise equal to `other`'s.
    pub fn values_bit_equal(&self, other: &ParameterSet<E>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}
