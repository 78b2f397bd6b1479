use super::examples::PreparedImage;
use crate::encoder::{pair_features, prior_matrix, Encoder};
use crate::error::Result;
use crate::io::{EncoderConfig, FocalConfig};
use crate::kernel::{ParamId, ParamSet, Real, Tape, Tensor, Var};
use crate::memory::ConceptMemory;

/// Encoder with adapters plus the memory whose keys are trainable
/// parameters. Parameter values live in a separate [`ParamSet`] so the same
/// model can be evaluated under perturbed parameters.
pub struct Model {
    pub encoder: Encoder,
    pub keys_ic: ParamId,
    pub keys_ia: ParamId,
    memory: ConceptMemory,
}

fn matrix<T: Real>(rows: usize, cols: usize, data: &[f32]) -> Result<Tensor<T>> {
    Tensor::matrix(rows, cols, data.iter().map(|&v| T::of(v as f64)).collect())
}

impl Model {
    /// Registers frozen encoder weights, adapters seeded by `seed` and the
    /// memory keys as trainable parameters.
    pub fn new<T: Real>(
        memory: &ConceptMemory,
        encoder: &EncoderConfig,
        seed: u64,
        params: &mut ParamSet<T>,
    ) -> Result<Self> {
        let mut enc = Encoder::new(encoder, memory.embed_dim(), params)?;
        enc.attach_adapters(params, seed);
        let keys_ic = params.add("memory.ic.keys", matrix(memory.ic.rows(), memory.ic.dim(), memory.ic.keys())?, true);
        let keys_ia = params.add("memory.ia.keys", matrix(memory.ia.rows(), memory.ia.dim(), memory.ia.keys())?, true);
        Ok(Model { encoder: enc, keys_ic, keys_ia, memory: memory.clone() })
    }

    /// Adapter parameters followed by both key matrices.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.adapter_ids();
        ids.push(self.keys_ic);
        ids.push(self.keys_ia);
        ids
    }

    /// The memory with its keys replaced by the current parameter values.
    pub fn memory<T: Real>(&self, params: &ParamSet<T>) -> Result<ConceptMemory> {
        let mut m = self.memory.clone();
        m.ic.set_keys(params.get(self.keys_ic).to_f32_vec())?;
        m.ia.set_keys(params.get(self.keys_ia).to_f32_vec())?;
        Ok(m)
    }

    /// Value matrices, semantic rows and settings as frozen at construction.
    pub fn frozen_memory(&self) -> &ConceptMemory {
        &self.memory
    }

    /// `(f_ic, f_ia)` rows of every pair of `image`, from the adapted encoder.
    pub fn pair_features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        image: &PreparedImage,
        pixels: &[f32],
    ) -> Result<(Var, Var)> {
        let priors = prior_matrix::<T>(&image.priors)?.map(|p| tape.constant(p));
        let tokens = self.encoder.tokens(tape, params, pixels, priors)?;
        let boxes = self.encoder.roi_features(tape, params, tokens, &image.boxes, image.width, image.height)?;
        pair_features(tape, boxes, image.human_rows.clone(), image.object_rows.clone(), image.union_rows.clone())
    }

    /// Raw logits (`pairs x labels`) of the three-branch score.
    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, f_ic: Var, f_ia: Var) -> Result<Var> {
        let m = &self.memory;
        let norm = m.normalize;
        let (q_ic, q_ia) = if norm { (tape.l2_normalize(f_ic), tape.l2_normalize(f_ia)) } else { (f_ic, f_ia) };
        let branch = |tape: &mut Tape<T>,
                      q: Var,
                      keys: ParamId,
                      values: &crate::memory::MemoryBranch,
                      gamma: f64|
         -> Result<Var> {
            let k = tape.param(params, keys);
            let k = if norm { tape.l2_normalize(k) } else { k };
            let a = tape.matmul_bt(q, k)?;
            let a = tape.scale(a, T::of(gamma / m.temperature));
            let l = tape.constant(matrix(values.rows(), values.labels(), values.values())?);
            tape.matmul(a, l)
        };
        let s_ic = branch(tape, q_ic, self.keys_ic, &m.ic, m.gammas.ic)?;
        let s_ia = branch(tape, q_ia, self.keys_ia, &m.ia, m.gammas.ia)?;
        let w_t = tape.constant(matrix(m.labels(), m.embed_dim(), m.w_t())?);
        let s_t = tape.matmul_bt(q_ia, w_t)?;
        let s_t = tape.scale(s_t, T::of(m.gammas.t));
        let s = tape.add(s_ic, s_ia)?;
        tape.add(s, s_t)
    }

    /// Focal loss of `(s_h s_o)^lambda * sigmoid(logits)` against `targets`,
    /// summed over entries and divided by `normalizer`.
    #[allow(clippy::too_many_arguments)]
    pub fn image_loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        image: &PreparedImage,
        pixels: &[f32],
        targets: &[f32],
        lambda: f64,
        focal: &FocalConfig,
        normalizer: f64,
    ) -> Result<Var> {
        let (f_ic, f_ia) = self.pair_features(tape, params, image, pixels)?;
        let s = self.logits(tape, params, f_ic, f_ia)?;
        let p = tape.sigmoid(s);
        let factors = image.confidences().into_iter().map(|c| T::of(c.powf(lambda))).collect();
        let p = tape.scale_rows(p, factors)?;
        tape.focal_loss(
            p,
            targets.iter().map(|&y| T::of(y as f64)).collect(),
            T::of(focal.alpha),
            T::of(focal.gamma),
            T::of(normalizer),
        )
    }
}
