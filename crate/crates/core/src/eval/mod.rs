//! Detection mAP over HOI classes.
//!
//! A triplet is a true positive when both its boxes overlap an unmatched
//! ground-truth pair of the same image and class with IoU >= 0.5. AP is the
//! exact area under the all-point interpolated precision-recall curve
//! (precision replaced by its running maximum from the right).

mod report;
mod sweep;

pub use report::{aggregate, evaluate, write_report, ClassAp, EvalReport};
pub use sweep::{axis_registry, run_sweep, sweep_csv, GammaWeights, Lambda, Shots, SweepAxis, SweepData, SweepRow};

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::io::{LabelSpace, Taxonomy};
use crate::memory::PairScores;
use crate::pairing::HumanObjectPair;

pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
    pub hoi_class: usize,
    pub score: f64,
}

/// A ground-truth instance of one HOI class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtInstance {
    pub image_id: u64,
    pub human_box: BBox,
    pub object_box: BBox,
}

/// One triplet per pair and label that names a taxonomy HOI class; the
/// score is the suppressed label score.
pub fn predictions_to_triplets(
    pairs: &[HumanObjectPair],
    scores: &[PairScores],
    taxonomy: &Taxonomy,
    space: LabelSpace,
) -> Vec<ScoredTriplet> {
    let mut out = Vec::new();
    for (p, s) in pairs.iter().zip(scores) {
        for (a, &score) in s.suppressed.iter().enumerate() {
            let hoi = match space {
                LabelSpace::Verb => taxonomy.hoi_index(a, p.object_class()),
                LabelSpace::Hoi => {
                    (a < taxonomy.num_hoi() && taxonomy.hoi_classes[a].1 == p.object_class()).then_some(a)
                }
            };
            if let Some(hoi_class) = hoi {
                out.push(ScoredTriplet {
                    image_id: p.pair_id.image_id,
                    human_box: p.human.bbox,
                    object_box: p.object.bbox,
                    hoi_class,
                    score,
                });
            }
        }
    }
    out
}

/// Ranking used by the matcher: score descending, then image id, then
/// input position.
pub fn ranking(triplets: &[&ScoredTriplet]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..triplets.len()).collect();
    idx.sort_by(|&a, &b| {
        triplets[b]
            .score
            .total_cmp(&triplets[a].score)
            .then(triplets[a].image_id.cmp(&triplets[b].image_id))
            .then(a.cmp(&b))
    });
    idx
}

/// True-positive flags in ranking order under greedy matching: each
/// triplet takes the unmatched same-image instance with the highest
/// `min(IoU_h, IoU_o)`, if that reaches [`MATCH_IOU`].
pub fn match_triplets(triplets: &[&ScoredTriplet], gt: &[GtInstance]) -> Vec<bool> {
    let mut by_image: std::collections::HashMap<u64, Vec<usize>> = std::collections::HashMap::new();
    for (i, g) in gt.iter().enumerate() {
        by_image.entry(g.image_id).or_default().push(i);
    }
    let mut taken = vec![false; gt.len()];
    ranking(triplets)
        .into_iter()
        .map(|i| {
            let t = triplets[i];
            let mut best: Option<(usize, f64)> = None;
            for &g in by_image.get(&t.image_id).map(Vec::as_slice).unwrap_or(&[]) {
                if taken[g] {
                    continue;
                }
                let iou = t.human_box.iou(&gt[g].human_box).min(t.object_box.iou(&gt[g].object_box));
                if iou >= MATCH_IOU && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// Interpolated all-point AP from ranked TP flags and the instance count.
/// Each true positive adds exactly `1/num_gt` recall, weighted by the best
/// precision reached at or after it.
pub fn ap_from_flags(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (k + 1) as f64);
    }
    let mut best = 0.0f64;
    let mut sum = 0.0;
    for k in (0..tp.len()).rev() {
        best = best.max(precision[k]);
        if tp[k] {
            sum += best;
        }
    }
    sum / num_gt as f64
}

/// AP of one class; `None` when there are neither instances nor triplets.
pub fn average_precision(triplets: &[&ScoredTriplet], gt: &[GtInstance]) -> Option<f64> {
    if gt.is_empty() {
        return (!triplets.is_empty()).then_some(0.0);
    }
    Some(ap_from_flags(&match_triplets(triplets, gt), gt.len()))
}
