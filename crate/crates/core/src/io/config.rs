use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fusion weights of the instance-centric, interaction-aware and semantic branches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gammas {
    pub ic: f64,
    pub ia: f64,
    pub t: f64,
}

impl Default for Gammas {
    fn default() -> Self {
        Gammas { ic: 0.5, ia: 0.5, t: 1.0 }
    }
}

impl Gammas {
    pub const fn new(ic: f64, ia: f64, t: f64) -> Self {
        Gammas { ic, ia, t }
    }

    /// Parses `x,y,z` (also accepts `:` as separator).
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split([',', ':']).map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("expected three gamma values, got `{s}`")));
        }
        let mut v = [0.0; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| Error::Config(format!("bad gamma value `{p}`")))?;
        }
        Ok(Gammas::new(v[0], v[1], v[2]))
    }
}

/// Whether label columns (and semantic rows) are per verb or per HOI class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    #[default]
    Verb,
    Hoi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub min_score: f32,
    pub top_k_per_class: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { min_score: 0.2, top_k_per_class: 15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-3, weight_decay: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha: 0.25, gamma: 2.0 }
    }
}

/// Dimensions of the patch-transformer encoder and its adapters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    /// Token width `d`.
    pub width: usize,
    /// Adapter bottleneck width `d'`.
    pub adapter_width: usize,
    pub heads: usize,
    pub adapter_heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    /// ROI-Align output grid `P`.
    pub roi_size: usize,
    pub roi_sampling: usize,
    pub weight_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 32,
            patch_size: 4,
            channels: 3,
            width: 32,
            adapter_width: 8,
            heads: 2,
            adapter_heads: 2,
            blocks: 2,
            mlp_ratio: 4,
            roi_size: 3,
            roi_sampling: 2,
            weight_seed: 17,
        }
    }
}

impl EncoderConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size));
        }
        if self.adapter_width >= self.width {
            return fail(format!("adapter_width {} must be below width {}", self.adapter_width, self.width));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return fail(format!("heads {} must divide width {}", self.heads, self.width));
        }
        if self.adapter_heads == 0 || !self.adapter_width.is_multiple_of(self.adapter_heads) {
            return fail(format!(
                "adapter_heads {} must divide adapter_width {}",
                self.adapter_heads, self.adapter_width
            ));
        }
        if self.roi_size == 0 || self.roi_sampling == 0 || self.channels == 0 {
            return fail("roi_size, roi_sampling and channels must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub lambda_train: f64,
    pub lambda_infer: f64,
    pub gammas: Gammas,
    /// Memory shots `K`: cap on cached pairs per HOI class.
    pub memory_shots: usize,
    pub shot_selector: String,
    pub normalize_keys: bool,
    /// Divides the visual affinities; 1 leaves scores untouched.
    pub temperature: f64,
    pub label_space: LabelSpace,
    pub detector: DetectorConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_pairs_per_image: usize,
    pub focal: FocalConfig,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda_train: 1.0,
            lambda_infer: 2.8,
            gammas: Gammas::default(),
            memory_shots: 16,
            shot_selector: "dataset-order".to_string(),
            normalize_keys: true,
            temperature: 1.0,
            label_space: LabelSpace::Verb,
            detector: DetectorConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 15,
            batch_size: 8,
            max_pairs_per_image: 64,
            focal: FocalConfig::default(),
            encoder: EncoderConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = super::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda_train,
            self.lambda_infer,
            self.gammas.ic,
            self.gammas.ia,
            self.gammas.t,
            self.temperature,
            self.optimizer.lr,
            self.optimizer.weight_decay,
            self.focal.alpha,
            self.focal.gamma,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("all weights must be finite".into()));
        }
        if self.lambda_train < 0.0 || self.lambda_infer < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.memory_shots == 0 {
            return Err(Error::Config("memory_shots must be at least 1".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.detector.min_score) {
            return Err(Error::Config("detector.min_score must lie in [0,1]".into()));
        }
        self.encoder.validate()
    }
}
