use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::examples::TrainExample;
use super::model::Model;
use crate::error::{Error, Result};
use crate::io::{EncoderConfig, FeatureStore, RunConfig};
use crate::kernel::{adamw_step, ParamId, ParamSet, Real, Tape};
use crate::memory::ConceptMemory;

/// Trainable model, its parameters and the per-epoch mean losses so far.
pub struct TrainState<T: Real> {
    pub model: Model,
    pub params: ParamSet<T>,
    pub loss_history: Vec<f64>,
}

impl<T: Real> TrainState<T> {
    /// Starts from `memory` exactly as built for training-free inference.
    pub fn new(memory: &ConceptMemory, encoder: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let model = Model::new(memory, encoder, seed, &mut params)?;
        Ok(TrainState { model, params, loss_history: Vec::new() })
    }

    /// Replaces the frozen encoder weights with values from a weights file.
    pub fn load_frozen(&mut self, weights: &FeatureStore) -> Result<()> {
        let ids = self.model.encoder.frozen_ids();
        crate::encoder::load_params(&mut self.params, &ids, weights)
    }

    pub fn memory(&self) -> Result<ConceptMemory> {
        self.model.memory(&self.params)
    }

    fn renormalize_keys(&mut self) {
        for id in [self.model.keys_ic, self.model.keys_ia] {
            let t = self.params.get_mut(id);
            let cols = t.cols();
            for row in t.data_mut().chunks_mut(cols) {
                let n = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
                if n > T::zero() {
                    row.iter_mut().for_each(|x| *x = *x / n);
                }
            }
        }
    }
}

type ImageGrads<T> = (f64, Vec<(ParamId, Vec<T>)>);

fn image_grads<T: Real>(
    state: &TrainState<T>,
    ex: &TrainExample,
    config: &RunConfig,
    normalizer: f64,
) -> Result<ImageGrads<T>> {
    let mut tape = Tape::new();
    let loss = state.model.image_loss(
        &mut tape,
        &state.params,
        &ex.image,
        &ex.pixels,
        &ex.targets,
        config.lambda_train,
        &config.focal,
        normalizer,
    )?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0].to_f64_lossy(), grads.param_grads(&tape)))
}

/// Runs `config.epochs` epochs of AdamW over `examples` and returns the
/// per-epoch mean batch loss.
///
/// Batches follow a permutation seeded by `seed + epoch`. Images of a batch
/// are processed in parallel and their gradients are summed in ascending
/// image-id order, so results do not depend on the worker count.
pub fn finetune<T: Real>(state: &mut TrainState<T>, examples: &[TrainExample], config: &RunConfig) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Empty("training set has no examples".into()));
    }
    let batch_size = config.batch_size.max(1);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let mut batch = chunk.to_vec();
            batch.sort_by_key(|&i| examples[i].image.image_id);
            let normalizer = batch.iter().map(|&i| examples[i].entries()).sum::<usize>() as f64;
            let shared: &TrainState<T> = state;
            let results: Vec<Result<ImageGrads<T>>> =
                batch.par_iter().map(|&i| image_grads(shared, &examples[i], config, normalizer)).collect();
            state.params.zero_grad();
            let mut loss = 0.0;
            for r in results {
                let (l, grads) = r?;
                loss += l;
                for (id, g) in grads {
                    state.params.accumulate_grad(id, &g);
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {} batch {b}", epoch + 1)));
            }
            adamw_step(&mut state.params, &config.optimizer)?;
            if config.normalize_keys {
                state.renormalize_keys();
            }
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::info!("epoch {}/{}: mean focal loss {mean:.6}", epoch + 1, config.epochs);
        history.push(mean);
    }
    state.loss_history.extend(&history);
    Ok(history)
}
