//! Detection filtering and exhaustive human-object pair enumeration.

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::io::{DetectorConfig, Taxonomy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f32,
    pub class_id: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairId {
    pub image_id: u64,
    pub human: usize,
    pub object: usize,
}

/// The `(b_h, s_h, b_o, s_o, c_o)` quintuple plus the union region.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanObjectPair {
    pub human: Detection,
    pub object: Detection,
    pub union_box: BBox,
    pub pair_id: PairId,
}

impl HumanObjectPair {
    pub fn object_class(&self) -> usize {
        self.object.class_id
    }

    /// `s_h * s_o`.
    pub fn confidence(&self) -> f64 {
        self.human.score as f64 * self.object.score as f64
    }
}

pub fn union_box(a: &BBox, b: &BBox) -> BBox {
    a.union(b)
}

/// Keeps detections scoring at least `min_score`, then the best
/// `top_k_per_class` of each class (earlier input wins ties). Output keeps
/// input order.
pub fn filter_detections(detections: &[Detection], config: &DetectorConfig) -> Vec<Detection> {
    let mut candidates: Vec<usize> =
        (0..detections.len()).filter(|&i| detections[i].score >= config.min_score).collect();
    // Stable sort keeps input order among equal (class, score).
    candidates.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        da.class_id.cmp(&db.class_id).then(db.score.total_cmp(&da.score))
    });
    let mut keep = vec![false; detections.len()];
    let mut run_class = usize::MAX;
    let mut taken = 0;
    for i in candidates {
        let c = detections[i].class_id;
        if c != run_class {
            run_class = c;
            taken = 0;
        }
        if taken < config.top_k_per_class {
            keep[i] = true;
            taken += 1;
        }
    }
    detections.iter().zip(keep).filter(|&(_, k)| k).map(|(d, _)| d.clone()).collect()
}

/// Every ordered (human, other detection) pair, human index major.
pub fn enumerate_pairs(image_id: u64, detections: &[Detection], taxonomy: &Taxonomy) -> Vec<HumanObjectPair> {
    let mut pairs = Vec::new();
    for (hi, h) in detections.iter().enumerate() {
        if h.class_id != taxonomy.human_class {
            continue;
        }
        for (oi, o) in detections.iter().enumerate() {
            if oi == hi {
                continue;
            }
            pairs.push(HumanObjectPair {
                human: h.clone(),
                object: o.clone(),
                union_box: union_box(&h.bbox, &o.bbox),
                pair_id: PairId { image_id, human: hi, object: oi },
            });
        }
    }
    pairs
}
