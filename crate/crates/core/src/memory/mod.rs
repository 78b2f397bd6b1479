//! Three-branch key-value concept memory.
//!
//! The instance-centric branch keys on `concat(f_h, f_o)`, the
//! interaction-aware branch on the union-region feature; both map keys to
//! multi-hot label rows. The semantic branch is a classifier whose rows are
//! text embeddings of the labels. A pair's logit vector is
//!
//! ```text
//! s = g_ic (q_ic F_ic^T) L_ic + g_ia (q_ia F_ia^T) L_ia + g_t q_u W_t^T
//! ```
//!
//! and the final score is `(s_h s_o)^lambda * sigmoid(s)`.

mod branch;
mod build;
mod codec;
mod select;

pub use branch::{branch_registry, default_branches, InstanceCentric, InteractionAware, ScoreBranch, Semantic};
pub use build::build_memory;
pub use codec::{decode_memory, encode_memory, read_memory, write_memory, MemoryParts, ACMB_MAGIC, ACMB_VERSION};
pub use select::{selector_registry, DatasetOrder, ShotSelector, UniformSample};

use crate::error::{Error, Result};
use crate::io::{Gammas, LabelSpace, RunConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RowProvenance {
    pub image_id: u64,
    /// Index into the image's `gt_pairs`.
    pub pair_index: usize,
    /// HOI classes whose shot budget this row consumed.
    pub contributed: Vec<usize>,
}

/// Key matrix `F` (`rows x dim`) with multi-hot value matrix `L` (`rows x labels`).
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBranch {
    dim: usize,
    labels: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    provenance: Vec<RowProvenance>,
}

impl MemoryBranch {
    pub fn new(dim: usize, labels: usize) -> Self {
        MemoryBranch { dim, labels, keys: Vec::new(), values: Vec::new(), provenance: Vec::new() }
    }

    pub fn from_matrices(dim: usize, labels: usize, keys: Vec<f32>, values: Vec<f32>) -> Result<Self> {
        if dim == 0 || !keys.len().is_multiple_of(dim) {
            return Err(Error::shape("memory_branch", &[dim], &[keys.len()]));
        }
        let rows = keys.len() / dim;
        if values.len() != rows * labels {
            return Err(Error::shape("memory_branch", &[rows, labels], &[values.len()]));
        }
        Ok(MemoryBranch { dim, labels, keys, values, provenance: Vec::new() })
    }

    pub(crate) fn push_row(&mut self, key: Vec<f32>, label: Vec<f32>, provenance: Option<RowProvenance>) {
        debug_assert_eq!(key.len(), self.dim);
        debug_assert_eq!(label.len(), self.labels);
        self.keys.extend(key);
        self.values.extend(label);
        if let Some(p) = provenance {
            self.provenance.push(p);
        }
    }

    pub fn rows(&self) -> usize {
        self.keys.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn key(&self, r: usize) -> &[f32] {
        &self.keys[r * self.dim..(r + 1) * self.dim]
    }

    pub fn value(&self, r: usize) -> &[f32] {
        &self.values[r * self.labels..(r + 1) * self.labels]
    }

    pub fn provenance(&self) -> &[RowProvenance] {
        &self.provenance
    }

    /// Replaces the key matrix (used when fine-tuned keys are loaded back).
    pub fn set_keys(&mut self, keys: Vec<f32>) -> Result<()> {
        if keys.len() != self.keys.len() {
            return Err(Error::shape("set_keys", &[self.keys.len()], &[keys.len()]));
        }
        self.keys = keys;
        Ok(())
    }

    fn pad_labels(&mut self, extra: usize) {
        let mut values = Vec::with_capacity(self.rows() * (self.labels + extra));
        for r in 0..self.rows() {
            values.extend_from_slice(self.value(r));
            values.extend(std::iter::repeat_n(0.0, extra));
        }
        self.values = values;
        self.labels += extra;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptMemory {
    pub ic: MemoryBranch,
    pub ia: MemoryBranch,
    w_t: Vec<f32>,
    embed_dim: usize,
    pub gammas: Gammas,
    pub shots: usize,
    pub label_space: LabelSpace,
    pub normalize: bool,
    pub temperature: f64,
}

/// L2-normalized copy in f64; zero vectors stay zero.
pub fn normalized(v: &[f32]) -> Vec<f64> {
    let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
    normalize_f64(x)
}

pub(crate) fn normalize_f64(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|a| *a /= n);
    }
    x
}

pub(crate) fn normalized_f32(v: &[f32]) -> Vec<f32> {
    normalized(v).into_iter().map(|a| a as f32).collect()
}

/// Query features of one pair, prepared for scoring.
#[derive(Clone, Debug)]
pub struct PairQuery {
    pub f_ic: Vec<f64>,
    pub f_ia: Vec<f64>,
    pub f_u: Vec<f64>,
}

/// Raw logits and suppressed scores of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScores {
    pub raw: Vec<f64>,
    pub suppressed: Vec<f64>,
}

impl ConceptMemory {
    pub fn new(embed_dim: usize, labels: usize, config: &RunConfig) -> Self {
        ConceptMemory {
            ic: MemoryBranch::new(2 * embed_dim, labels),
            ia: MemoryBranch::new(embed_dim, labels),
            w_t: Vec::new(),
            embed_dim,
            gammas: config.gammas,
            shots: config.memory_shots,
            label_space: config.label_space,
            normalize: config.normalize_keys,
            temperature: config.temperature,
        }
    }

    /// Reassembles a memory from decoded matrices; settings come from `config`.
    pub fn from_parts(parts: MemoryParts, config: &RunConfig) -> Result<Self> {
        let embed_dim = parts.ia.dim();
        if parts.ic.dim() != 2 * embed_dim {
            return Err(Error::shape("memory", &[2 * embed_dim], &[parts.ic.dim()]));
        }
        if parts.ic.labels() != parts.ia.labels() || parts.w_t_cols != embed_dim {
            return Err(Error::shape("memory", &[parts.ic.labels(), embed_dim], &[parts.ia.labels(), parts.w_t_cols]));
        }
        let mut m = ConceptMemory::new(embed_dim, parts.ic.labels(), config);
        m.ic = parts.ic;
        m.ia = parts.ia;
        m.w_t = parts.w_t;
        m.check_semantic_rows()?;
        Ok(m)
    }

    fn check_semantic_rows(&self) -> Result<()> {
        if self.w_t.len() != self.labels() * self.embed_dim {
            return Err(Error::shape("memory.w_t", &[self.labels(), self.embed_dim], &[self.w_t.len()]));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Width of the label space (`A` for verb labels).
    pub fn labels(&self) -> usize {
        self.ia.labels()
    }

    pub fn w_t(&self) -> &[f32] {
        &self.w_t
    }

    pub fn semantic_row(&self, a: usize) -> &[f32] {
        &self.w_t[a * self.embed_dim..(a + 1) * self.embed_dim]
    }

    pub(crate) fn push_semantic_row(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.embed_dim);
        self.w_t.extend(if self.normalize { normalized_f32(row) } else { row.to_vec() });
    }

    pub fn with_gammas(mut self, gammas: Gammas) -> Self {
        self.gammas = gammas;
        self
    }

    /// Prepares (and, when normalization is on, L2-normalizes) query features.
    pub fn query(&self, f_ic: &[f32], f_ia: &[f32], f_u: &[f32]) -> Result<PairQuery> {
        if f_ic.len() != self.ic.dim() || f_ia.len() != self.ia.dim() || f_u.len() != self.embed_dim {
            return Err(Error::shape(
                "score_pair",
                &[self.ic.dim(), self.ia.dim(), self.embed_dim],
                &[f_ic.len(), f_ia.len(), f_u.len()],
            ));
        }
        let prep = |v: &[f32]| {
            if self.normalize {
                normalized(v)
            } else {
                v.iter().map(|&a| a as f64).collect()
            }
        };
        Ok(PairQuery { f_ic: prep(f_ic), f_ia: prep(f_ia), f_u: prep(f_u) })
    }

    /// Raw logits of one pair, summed over the default three branches.
    pub fn score_pair(&self, f_ic: &[f32], f_ia: &[f32], f_u: &[f32]) -> Result<Vec<f64>> {
        let q = self.query(f_ic, f_ia, f_u)?;
        Ok(self.score_query(&q, &default_branches()))
    }

    /// Logits from an explicit branch list, each weighted by its gamma.
    pub fn score_query(&self, q: &PairQuery, branches: &[&dyn ScoreBranch]) -> Vec<f64> {
        let mut out = vec![0.0; self.labels()];
        for b in branches {
            let w = b.weight(&self.gammas);
            if w != 0.0 {
                b.accumulate(self, q, w, &mut out);
            }
        }
        out
    }

    /// Appends a semantic row for a new label; visual value matrices gain a
    /// zero column so every label width stays consistent.
    pub fn add_semantic_class(&mut self, embedding: &[f32]) -> Result<usize> {
        if embedding.len() != self.embed_dim {
            return Err(Error::shape("add_semantic_class", &[self.embed_dim], &[embedding.len()]));
        }
        self.ic.pad_labels(1);
        self.ia.pad_labels(1);
        self.push_semantic_row(embedding);
        Ok(self.labels() - 1)
    }

    /// Rows whose shot budget each HOI class consumed, from provenance.
    pub fn contributions_per_class(&self, num_hoi: usize) -> Vec<usize> {
        let mut counts = vec![0; num_hoi];
        for p in self.ic.provenance() {
            for &c in &p.contributed {
                counts[c] += 1;
            }
        }
        counts
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(s_h * s_o)^lambda * sigmoid(raw)`, elementwise.
pub fn suppress(raw: &[f64], s_h: f64, s_o: f64, lambda: f64) -> Vec<f64> {
    let factor = (s_h * s_o).powf(lambda);
    raw.iter().map(|&r| factor * sigmoid(r)).collect()
}

#[cfg(test)]
mod tests;
