//! Frozen patch-transformer encoder with residual instance-aware adapters.
//!
//! Images are patchified, embedded with learned positions and passed through
//! pre-layernorm transformer blocks. When adapters are attached, each block
//! starts with `X + MHCA(X W_down, H, H) W_up`, where `H = MLP_p(P)` embeds
//! the prior tokens of the image's detections. Region features are pooled
//! from the token grid with ROI-Align and projected to the embedding width.
//!
//! Every operation is recorded on a [`Tape`], so the same code serves plain
//! inference and fine-tuning. Frozen weights are registered as
//! non-trainable parameters and never receive gradients.

mod layers;
mod priors;
mod roi;
mod weights;

pub use layers::{Attention, LayerNorm, Linear};
pub use priors::{featurize_priors, prior_matrix, PriorToken, BOX_FEATURES};
pub use roi::{roi_sampling_matrix, sanitize_box};
pub use weights::{load_params, read_params, save_params, write_params, PARAM_CHUNK};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::io::EncoderConfig;
use crate::kernel::{ParamId, ParamSet, Real, Tape, Tensor, Var};
use layers::Init;

const LN_EPS: f64 = 1e-5;

struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    mlp_in: Linear,
    mlp_out: Linear,
}

/// `W_down`, the two-layer prior MLP, cross-attention and `W_up`.
pub struct Adapter {
    down: Linear,
    prior_in: Linear,
    prior_out: Linear,
    attn: Attention,
    up: Linear,
}

impl Adapter {
    /// Residual update `MHCA(X W_down, H, H) W_up` for tokens `x` and the
    /// prior-token matrix `priors`.
    pub fn update<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var, priors: Var) -> Result<Var> {
        let q = self.down.apply(tape, params, x)?;
        let h = self.prior_in.apply(tape, params, priors)?;
        let h = tape.gelu(h);
        let h = self.prior_out.apply(tape, params, h)?;
        let a = self.attn.apply(tape, params, q, h)?;
        self.up.apply(tape, params, a)
    }

    pub fn up_weight(&self) -> ParamId {
        self.up.weight()
    }

    fn ids(&self) -> Vec<ParamId> {
        [&self.down, &self.prior_in, &self.prior_out, &self.up]
            .into_iter()
            .flat_map(Linear::ids)
            .chain(self.attn.ids())
            .collect()
    }
}

pub struct Encoder {
    config: EncoderConfig,
    embed_dim: usize,
    patch: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    proj: ParamId,
    adapters: Option<Vec<Adapter>>,
}

impl Encoder {
    /// Registers frozen weights drawn from `config.weight_seed`.
    pub fn new<T: Real>(config: &EncoderConfig, embed_dim: usize, params: &mut ParamSet<T>) -> Result<Self> {
        config.validate()?;
        if embed_dim == 0 {
            return Err(Error::Config("embedding width must be positive".into()));
        }
        let d = config.width;
        let tokens = config.grid() * config.grid();
        let patch_dim = config.channels * config.patch_size * config.patch_size;
        let mut init = Init::new(params, ChaCha8Rng::seed_from_u64(config.weight_seed), false);
        let patch = init.linear("encoder.patch", patch_dim, d, true);
        let pos = init.normal("encoder.pos", tokens, d, 0.1);
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let p = format!("encoder.blocks.{b}");
            blocks.push(Block {
                ln1: init.layernorm(&format!("{p}.ln1"), d),
                attn: init.attention(&format!("{p}.attn"), d, d, config.heads),
                ln2: init.layernorm(&format!("{p}.ln2"), d),
                mlp_in: init.linear(&format!("{p}.mlp_in"), d, d * config.mlp_ratio, true),
                mlp_out: init.linear(&format!("{p}.mlp_out"), d * config.mlp_ratio, d, true),
            });
        }
        let proj = init.normal("encoder.proj", d, embed_dim, 1.0 / (d as f64).sqrt());
        Ok(Encoder { config: config.clone(), embed_dim, patch, pos, blocks, proj, adapters: None })
    }

    /// Attaches one trainable adapter per block; `W_up` starts at zero.
    pub fn attach_adapters<T: Real>(&mut self, params: &mut ParamSet<T>, seed: u64) {
        let (d, da) = (self.config.width, self.config.adapter_width);
        let prior_dim = self.prior_dim();
        let mut init = Init::new(params, ChaCha8Rng::seed_from_u64(seed ^ 0xada9_7e25), true);
        let adapters = (0..self.config.blocks)
            .map(|b| {
                let p = format!("adapter.{b}");
                Adapter {
                    down: init.linear(&format!("{p}.down"), d, da, false),
                    prior_in: init.linear(&format!("{p}.prior_in"), prior_dim, da, true),
                    prior_out: init.linear(&format!("{p}.prior_out"), da, da, true),
                    attn: init.attention(&format!("{p}.attn"), da, da, self.config.adapter_heads),
                    up: init.zero_linear(&format!("{p}.up"), da, d),
                }
            })
            .collect();
        self.adapters = Some(adapters);
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Width of one prior token: 8 geometry values, the score and `e_t`.
    pub fn prior_dim(&self) -> usize {
        BOX_FEATURES + 1 + self.embed_dim
    }

    pub fn adapters(&self) -> Option<&[Adapter]> {
        self.adapters.as_deref()
    }

    /// Every trainable adapter parameter.
    pub fn adapter_ids(&self) -> Vec<ParamId> {
        self.adapters.iter().flatten().flat_map(Adapter::ids).collect()
    }

    /// Every frozen parameter, in registration order.
    pub fn frozen_ids(&self) -> Vec<ParamId> {
        let mut ids = self.patch.ids();
        ids.push(self.pos);
        for b in &self.blocks {
            ids.extend(b.ln1.ids());
            ids.extend(b.attn.ids());
            ids.extend(b.ln2.ids());
            ids.extend(b.mlp_in.ids());
            ids.extend(b.mlp_out.ids());
        }
        ids.push(self.proj);
        ids
    }

    /// Splits a `channels x S x S` pixel grid into one row per patch.
    pub fn patchify<T: Real>(&self, image: &[f32]) -> Result<Tensor<T>> {
        let (c, s, p, g) = (self.config.channels, self.config.image_size, self.config.patch_size, self.config.grid());
        if image.len() != c * s * s {
            return Err(Error::shape("encode", &[c, s, s], &[image.len()]));
        }
        let mut data = Vec::with_capacity(image.len());
        for r in 0..g {
            for col in 0..g {
                for ch in 0..c {
                    for dy in 0..p {
                        let start = ch * s * s + (r * p + dy) * s + col * p;
                        data.extend(image[start..start + p].iter().map(|&v| T::of(v as f64)));
                    }
                }
            }
        }
        Tensor::matrix(g * g, c * p * p, data)
    }

    /// Token grid (`H'W' x d`) after all blocks. Adapters run only when
    /// attached and at least one prior token is present.
    pub fn tokens<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        image: &[f32],
        priors: Option<Var>,
    ) -> Result<Var> {
        let patches = tape.constant(self.patchify(image)?);
        let x = self.patch.apply(tape, params, patches)?;
        let pos = tape.param(params, self.pos);
        let mut x = tape.add(x, pos)?;
        for (i, block) in self.blocks.iter().enumerate() {
            if let (Some(adapters), Some(p)) = (&self.adapters, priors) {
                let u = adapters[i].update(tape, params, x, p)?;
                x = tape.add(x, u)?;
            }
            let y = block.ln1.apply(tape, params, x, LN_EPS)?;
            let y = block.attn.apply(tape, params, y, y)?;
            x = tape.add(x, y)?;
            let y = block.ln2.apply(tape, params, x, LN_EPS)?;
            let y = block.mlp_in.apply(tape, params, y)?;
            let y = tape.gelu(y);
            let y = block.mlp_out.apply(tape, params, y)?;
            x = tape.add(x, y)?;
        }
        Ok(x)
    }

    /// ROI-Align features of `boxes` (given in `width x height` image
    /// coordinates), projected to `d_e` and L2-normalized: `boxes x d_e`.
    pub fn roi_features<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamSet<T>,
        tokens: Var,
        boxes: &[BBox],
        width: f32,
        height: f32,
    ) -> Result<Var> {
        let g = self.config.grid();
        let s = roi_sampling_matrix(boxes, width, height, g, self.config.roi_size, self.config.roi_sampling);
        let s = Tensor::from_f64(&[boxes.len(), g * g], &s)?;
        let s = tape.constant(s);
        let pooled = tape.matmul(s, tokens)?;
        let w = tape.param(params, self.proj);
        let f = tape.matmul(pooled, w)?;
        Ok(tape.l2_normalize(f))
    }

    /// Mean of all tokens, projected and normalized: a `1 x d_e` image embedding.
    pub fn pooled<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, tokens: Var) -> Result<Var> {
        let m = tape.mean_pool(tokens, crate::kernel::Axis::Rows);
        let w = tape.param(params, self.proj);
        let f = tape.matmul(m, w)?;
        Ok(tape.l2_normalize(f))
    }
}

/// `f_ic = concat(f_h, f_o)` and `f_ia = f_u = f_union` gathered from a
/// matrix of per-box features.
pub fn pair_features<T: Real>(
    tape: &mut Tape<T>,
    boxes: Var,
    humans: Vec<usize>,
    objects: Vec<usize>,
    unions: Vec<usize>,
) -> Result<(Var, Var)> {
    let h = tape.gather_rows(boxes, humans)?;
    let o = tape.gather_rows(boxes, objects)?;
    let f_ic = tape.concat(h, o)?;
    let f_ia = tape.gather_rows(boxes, unions)?;
    Ok((f_ic, f_ia))
}
