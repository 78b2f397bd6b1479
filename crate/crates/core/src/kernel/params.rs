use std::collections::HashMap;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::io::OptimizerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters with their AdamW moments.
#[derive(Clone, Debug)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    by_name: HashMap<String, ParamId>,
    step: u64,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
            by_name: HashMap::new(),
            step: 0,
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; `trainable` ones get a gradient accumulator.
    pub fn add(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter `{name}`");
        let t = if trainable { tensor.with_grad() } else { tensor.detached() };
        let n = t.len();
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.first.push(vec![T::zero(); if trainable { n } else { 0 }]);
        self.second.push(vec![T::zero(); if trainable { n } else { 0 }]);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.tensors[id.0].requires_grad())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }

    /// Adds `delta` into the gradient accumulator of `id` (no-op when frozen).
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[T]) {
        self.tensors[id.0].accumulate_grad(delta);
    }

    /// Adds `other`'s gradients into ours; both sets must share a layout.
    pub fn add_grads_from(&mut self, other: &ParamSet<T>) {
        for (mine, theirs) in self.tensors.iter_mut().zip(&other.tensors) {
            if let Some(g) = theirs.grad() {
                mine.accumulate_grad(g);
            }
        }
    }
}

/// One AdamW update of every trainable parameter: bias-corrected moments,
/// weight decay decoupled from the gradient.
pub fn adamw_step<T: Real>(params: &mut ParamSet<T>, config: &OptimizerConfig) -> Result<()> {
    for id in params.trainable_ids().collect::<Vec<_>>() {
        let g = params.tensors[id.0].grad().expect("trainable");
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", params.names[id.0])));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let lr = T::of(config.lr);
    let wd = T::of(config.weight_decay);
    let (b1, b2, eps) = (T::of(config.beta1), T::of(config.beta2), T::of(config.eps));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for i in 0..params.tensors.len() {
        if !params.tensors[i].requires_grad() {
            continue;
        }
        let grad = params.tensors[i].grad().expect("trainable").to_vec();
        let (m, v) = (&mut params.first[i], &mut params.second[i]);
        let data = params.tensors[i].data_mut();
        for j in 0..data.len() {
            let gj = grad[j];
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            data[j] = data[j] - lr * wd * data[j];
            data[j] = data[j] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
