use std::path::Path;

use serde::{Deserialize, Serialize};

use super::taxonomy::Taxonomy;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::pairing::Detection;

/// One annotated human-object pair; `verb_set` lists every action the
/// human performs on that object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtPair {
    pub human_box: BBox,
    pub object_box: BBox,
    pub object_class: usize,
    pub verb_set: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub gt_pairs: Vec<GtPair>,
    #[serde(default)]
    pub detections: Vec<Detection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetAnnotations {
    pub taxonomy: Taxonomy,
    pub images: Vec<ImageRecord>,
    /// Training-instance count per HOI class, computed at load.
    #[serde(default)]
    pub hoi_counts: Vec<usize>,
}

impl DatasetAnnotations {
    /// Validates and normalizes an in-memory document: clamps boxes to the
    /// image, checks every invariant, recomputes counts and (absent an
    /// explicit override) rare flags.
    pub fn validated(mut self) -> Result<Self> {
        let tax = &self.taxonomy;
        let mut counts = vec![0usize; tax.num_hoi()];
        for img in &mut self.images {
            let id = img.image_id;
            if img.width == 0 || img.height == 0 {
                return Err(annotation_err(id, "width/height", "image has zero extent"));
            }
            let (w, h) = (img.width as f32, img.height as f32);
            for (pi, gt) in img.gt_pairs.iter_mut().enumerate() {
                gt.human_box = clamp_box(id, &format!("gt_pairs[{pi}].human_box"), gt.human_box, w, h)?;
                gt.object_box = clamp_box(id, &format!("gt_pairs[{pi}].object_box"), gt.object_box, w, h)?;
                if gt.object_class >= tax.num_objects() {
                    return Err(annotation_err(
                        id,
                        &format!("gt_pairs[{pi}].object_class"),
                        &format!("{} >= {} objects", gt.object_class, tax.num_objects()),
                    ));
                }
                if gt.verb_set.is_empty() {
                    return Err(annotation_err(id, &format!("gt_pairs[{pi}].verb_set"), "empty verb set"));
                }
                for &v in &gt.verb_set {
                    if v >= tax.num_verbs() {
                        return Err(annotation_err(
                            id,
                            &format!("gt_pairs[{pi}].verb_set"),
                            &format!("verb {v} >= {} verbs", tax.num_verbs()),
                        ));
                    }
                    match tax.hoi_index(v, gt.object_class) {
                        Some(hoi) => counts[hoi] += 1,
                        None => {
                            return Err(annotation_err(
                                id,
                                &format!("gt_pairs[{pi}].verb_set"),
                                &format!("({v}, {}) is not an HOI class", gt.object_class),
                            ))
                        }
                    }
                }
            }
            for (di, det) in img.detections.iter_mut().enumerate() {
                det.bbox = clamp_box(id, &format!("detections[{di}].box"), det.bbox, w, h)?;
                if !(0.0..=1.0).contains(&det.score) {
                    return Err(annotation_err(
                        id,
                        &format!("detections[{di}].score"),
                        &format!("{} outside [0,1]", det.score),
                    ));
                }
                if det.class_id >= tax.num_objects() {
                    return Err(annotation_err(
                        id,
                        &format!("detections[{di}].class_id"),
                        &format!("{} >= {} objects", det.class_id, tax.num_objects()),
                    ));
                }
            }
        }
        self.taxonomy.rare_from_counts(&counts);
        self.hoi_counts = counts;
        Ok(self)
    }

    pub fn num_gt_pairs(&self) -> usize {
        self.images.iter().map(|i| i.gt_pairs.len()).sum()
    }
}

fn annotation_err(image_id: u64, field: &str, reason: &str) -> Error {
    Error::Annotation { image_id, field: field.to_string(), reason: reason.to_string() }
}

fn clamp_box(image_id: u64, field: &str, b: BBox, w: f32, h: f32) -> Result<BBox> {
    let c = b.clamp_to(w, h);
    if !c.is_valid() {
        return Err(annotation_err(
            image_id,
            field,
            &format!("degenerate box {:?} after clamping to {w}x{h}", <[f32; 4]>::from(b)),
        ));
    }
    Ok(c)
}

pub fn load_annotations(path: &Path) -> Result<DatasetAnnotations> {
    let doc: DatasetAnnotations = super::read_json(path)?;
    doc.validated()
}

pub fn save_annotations(path: &Path, annotations: &DatasetAnnotations) -> Result<()> {
    super::write_json(path, annotations)
}
