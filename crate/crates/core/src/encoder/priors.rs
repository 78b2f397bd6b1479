use crate::error::{Error, Result};
use crate::io::{FeatureStore, Role};
use crate::kernel::{Real, Tensor};
use crate::memory::normalized_f32;
use crate::pairing::Detection;

pub const BOX_FEATURES: usize = 8;

/// Geometry, confidence and object-class text embedding of one detection.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorToken {
    /// `[x1/W, y1/H, x2/W, y2/H, cx/W, cy/H, w/W, h/H]`.
    pub box_feats: [f32; BOX_FEATURES],
    pub score: f32,
    /// Unit-norm or zero.
    pub text_embedding: Vec<f32>,
}

impl PriorToken {
    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(BOX_FEATURES + 1 + self.text_embedding.len());
        v.extend_from_slice(&self.box_feats);
        v.push(self.score);
        v.extend_from_slice(&self.text_embedding);
        v
    }
}

/// One token per detection, in input order. Text embeddings are read from
/// `object_text` records of `texts`.
pub fn featurize_priors(
    detections: &[Detection],
    width: f32,
    height: f32,
    texts: &FeatureStore,
) -> Result<Vec<PriorToken>> {
    detections
        .iter()
        .map(|d| {
            let text = texts
                .lookup_index(Role::ObjectText, d.class_id)
                .ok_or_else(|| Error::MissingRecord(format!("object_text embedding for class {}", d.class_id)))?;
            let b = d.bbox;
            let (cx, cy) = b.center();
            let g = [
                b.x1 / width,
                b.y1 / height,
                b.x2 / width,
                b.y2 / height,
                cx / width,
                cy / height,
                b.width() / width,
                b.height() / height,
            ];
            Ok(PriorToken {
                box_feats: g.map(|v| v.clamp(0.0, 1.0)),
                score: d.score.clamp(0.0, 1.0),
                text_embedding: normalized_f32(text),
            })
        })
        .collect()
}

/// Stacks tokens into an `N_t x (9 + d_e)` matrix; `None` when there are none.
pub fn prior_matrix<T: Real>(tokens: &[PriorToken]) -> Result<Option<Tensor<T>>> {
    let Some(first) = tokens.first() else {
        return Ok(None);
    };
    let cols = first.to_vec().len();
    let mut data = Vec::with_capacity(tokens.len() * cols);
    for t in tokens {
        let v = t.to_vec();
        if v.len() != cols {
            return Err(Error::shape("prior_matrix", &[cols], &[v.len()]));
        }
        data.extend(v.into_iter().map(|x| T::of(x as f64)));
    }
    Tensor::matrix(tokens.len(), cols, data).map(Some)
}
