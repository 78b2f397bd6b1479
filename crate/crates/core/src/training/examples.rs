use std::collections::HashMap;

use super::targets::assign_targets;
use crate::bbox::BBox;
use crate::encoder::{featurize_priors, PriorToken};
use crate::error::{Error, Result};
use crate::io::{DatasetAnnotations, FeatureStore, ImageRecord, LabelSpace, RunConfig, Taxonomy};
use crate::pairing::{enumerate_pairs, filter_detections, Detection, HumanObjectPair};

/// Detections, candidate pairs and the deduplicated box list of one image.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub image_id: u64,
    pub width: f32,
    pub height: f32,
    pub detections: Vec<Detection>,
    pub priors: Vec<PriorToken>,
    pub pairs: Vec<HumanObjectPair>,
    /// Distinct boxes: every detection, then each new union box.
    pub boxes: Vec<BBox>,
    pub human_rows: Vec<usize>,
    pub object_rows: Vec<usize>,
    pub union_rows: Vec<usize>,
}

impl PreparedImage {
    /// `s_h * s_o` per pair.
    pub fn confidences(&self) -> Vec<f64> {
        self.pairs.iter().map(HumanObjectPair::confidence).collect()
    }
}

/// Filters detections, enumerates pairs and keeps at most
/// `max_pairs_per_image` of them by descending confidence.
pub fn prepare_image(
    img: &ImageRecord,
    taxonomy: &Taxonomy,
    texts: &FeatureStore,
    config: &RunConfig,
) -> Result<PreparedImage> {
    let detections = filter_detections(&img.detections, &config.detector);
    let mut pairs = enumerate_pairs(img.image_id, &detections, taxonomy);
    if pairs.len() > config.max_pairs_per_image {
        let mut rank: Vec<usize> = (0..pairs.len()).collect();
        rank.sort_by(|&a, &b| pairs[b].confidence().total_cmp(&pairs[a].confidence()));
        let mut keep = vec![false; pairs.len()];
        rank.iter().take(config.max_pairs_per_image).for_each(|&i| keep[i] = true);
        let mut it = keep.into_iter();
        pairs.retain(|_| it.next().unwrap());
    }
    let (width, height) = (img.width as f32, img.height as f32);
    let priors = featurize_priors(&detections, width, height, texts)?;
    let mut boxes: Vec<BBox> = detections.iter().map(|d| d.bbox).collect();
    let mut index: HashMap<[u32; 4], usize> = HashMap::new();
    for (i, b) in boxes.iter().enumerate() {
        index.entry(b.bits()).or_insert(i);
    }
    let mut union_rows = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let next = boxes.len();
        let row = *index.entry(p.union_box.bits()).or_insert(next);
        if row == next {
            boxes.push(p.union_box);
        }
        union_rows.push(row);
    }
    Ok(PreparedImage {
        image_id: img.image_id,
        width,
        height,
        human_rows: pairs.iter().map(|p| index[&p.human.bbox.bits()]).collect(),
        object_rows: pairs.iter().map(|p| index[&p.object.bbox.bits()]).collect(),
        union_rows,
        detections,
        priors,
        pairs,
        boxes,
    })
}

/// A prepared image with its pixels and `pairs x labels` targets.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub image: PreparedImage,
    pub pixels: Vec<f32>,
    pub targets: Vec<f32>,
}

impl TrainExample {
    pub fn entries(&self) -> usize {
        self.targets.len()
    }
}

/// Training examples in ascending image-id order; images without candidate
/// pairs are skipped. `images` holds the pixel grids, `texts` the
/// object-class embeddings.
pub fn prepare_training_set(
    ann: &DatasetAnnotations,
    images: &FeatureStore,
    texts: &FeatureStore,
    config: &RunConfig,
) -> Result<Vec<TrainExample>> {
    let tax = &ann.taxonomy;
    let mut records: Vec<&ImageRecord> = ann.images.iter().collect();
    records.sort_by_key(|r| r.image_id);
    let mut out = Vec::with_capacity(records.len());
    for img in records {
        let prepared = prepare_image(img, tax, texts, config)?;
        if prepared.pairs.is_empty() {
            continue;
        }
        let pixels = images
            .lookup_image(img.image_id)
            .ok_or_else(|| Error::MissingRecord(format!("pixels of image {}", img.image_id)))?
            .to_vec();
        let mut targets = Vec::new();
        for (t, p) in assign_targets(&prepared.pairs, &img.gt_pairs, tax).iter().zip(&prepared.pairs) {
            match config.label_space {
                LabelSpace::Verb => targets.extend_from_slice(&t.verbs),
                LabelSpace::Hoi => {
                    let mut row = vec![0.0f32; tax.num_hoi()];
                    for (v, &y) in t.verbs.iter().enumerate() {
                        if y > 0.0 {
                            if let Some(h) = tax.hoi_index(v, p.object_class()) {
                                row[h] = 1.0;
                            }
                        }
                    }
                    targets.extend(row);
                }
            }
        }
        out.push(TrainExample { image: prepared, pixels, targets });
    }
    if out.is_empty() {
        return Err(Error::Empty("no training image has a candidate pair".into()));
    }
    Ok(out)
}
