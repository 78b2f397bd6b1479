use crate::error::{Error, Result};
use crate::io::{GtPair, Taxonomy};
use crate::kernel::focal_term;
use crate::pairing::{HumanObjectPair, PairId};

/// Multi-hot verb target of one candidate pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTarget {
    pub pair_id: PairId,
    pub verbs: Vec<f32>,
}

impl PairTarget {
    pub fn is_positive(&self) -> bool {
        self.verbs.iter().any(|&v| v > 0.0)
    }
}

/// A pair takes verb `v` iff some ground-truth pair of the same object class
/// carries `v` and overlaps both its boxes with IoU >= 0.5.
pub fn assign_targets(pairs: &[HumanObjectPair], gt: &[GtPair], taxonomy: &Taxonomy) -> Vec<PairTarget> {
    pairs
        .iter()
        .map(|p| {
            let mut verbs = vec![0.0f32; taxonomy.num_verbs()];
            for g in gt {
                if g.object_class == p.object_class()
                    && p.human.bbox.iou(&g.human_box) >= 0.5
                    && p.object.bbox.iou(&g.object_box) >= 0.5
                {
                    for &v in &g.verb_set {
                        verbs[v] = 1.0;
                    }
                }
            }
            PairTarget { pair_id: p.pair_id, verbs }
        })
        .collect()
}

/// Mean focal loss of probabilities `p` against binary targets `y`.
pub fn focal_loss(p: &[f64], y: &[f64], alpha: f64, gamma: f64) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::shape("focal_loss", &[p.len()], &[y.len()]));
    }
    if p.is_empty() {
        return Err(Error::Empty("focal loss over no entries".into()));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("focal_loss input".into()));
    }
    let total: f64 = p.iter().zip(y).map(|(&p, &y)| focal_term(p, y, alpha, gamma)).sum();
    Ok(total / p.len() as f64)
}
