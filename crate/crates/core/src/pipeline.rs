//! End-to-end inference: detections to scored HOI triplets, either from
//! precomputed crop features (training-free) or from pixels through the
//! adapted encoder (fine-tuned).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{predictions_to_triplets, ScoredTriplet};
use crate::io::{DatasetAnnotations, FeatureStore, ImageRecord, Role, RunConfig};
use crate::kernel::{Real, Tape};
use crate::memory::{suppress, ConceptMemory, PairScores};
use crate::pairing::{enumerate_pairs, filter_detections, HumanObjectPair};
use crate::training::{prepare_image, TrainState};

/// Raw and suppressed scores of one pair from its three crop features.
pub fn score_pair_features(
    memory: &ConceptMemory,
    pair: &HumanObjectPair,
    human: &[f32],
    object: &[f32],
    union: &[f32],
    lambda: f64,
) -> Result<PairScores> {
    let f_ic: Vec<f32> = human.iter().chain(object).copied().collect();
    let raw = memory.score_pair(&f_ic, union, union)?;
    let suppressed = suppress(&raw, pair.human.score as f64, pair.object.score as f64, lambda);
    Ok(PairScores { raw, suppressed })
}

/// Candidate pairs of one image with their feature-path scores.
pub fn score_image_features(
    img: &ImageRecord,
    ann: &DatasetAnnotations,
    features: &FeatureStore,
    memory: &ConceptMemory,
    config: &RunConfig,
) -> Result<(Vec<HumanObjectPair>, Vec<PairScores>)> {
    let dets = filter_detections(&img.detections, &config.detector);
    let pairs = enumerate_pairs(img.image_id, &dets, &ann.taxonomy);
    let fetch = |role: Role, b| {
        features.lookup_box(img.image_id, role, b).ok_or_else(|| {
            Error::MissingRecord(format!("{role:?} feature for image {} box {:?}", img.image_id, <[f32; 4]>::from(*b)))
        })
    };
    let scores = pairs
        .iter()
        .map(|p| {
            let h = fetch(Role::Human, &p.human.bbox)?;
            let o = fetch(Role::Object, &p.object.bbox)?;
            let u = fetch(Role::Union, &p.union_box)?;
            score_pair_features(memory, p, h, o, u, config.lambda_infer)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pairs, scores))
}

fn sorted_images(ann: &DatasetAnnotations) -> Vec<&ImageRecord> {
    let mut imgs: Vec<&ImageRecord> = ann.images.iter().collect();
    imgs.sort_by_key(|i| i.image_id);
    imgs
}

/// Training-free triplets for every image, in ascending image-id order.
pub fn infer_features(
    ann: &DatasetAnnotations,
    features: &FeatureStore,
    memory: &ConceptMemory,
    config: &RunConfig,
) -> Result<Vec<ScoredTriplet>> {
    let per_image = sorted_images(ann)
        .par_iter()
        .map(|img| {
            let (pairs, scores) = score_image_features(img, ann, features, memory, config)?;
            Ok(predictions_to_triplets(&pairs, &scores, &ann.taxonomy, config.label_space))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Triplets from pixels through the adapted encoder and the trained keys.
/// `texts` holds the object-class embeddings of the prior tokens.
pub fn infer_images<T: Real>(
    ann: &DatasetAnnotations,
    images: &FeatureStore,
    texts: &FeatureStore,
    state: &TrainState<T>,
    config: &RunConfig,
) -> Result<Vec<ScoredTriplet>> {
    let memory = state.memory()?;
    let per_image = sorted_images(ann)
        .par_iter()
        .map(|img| {
            let prepared = prepare_image(img, &ann.taxonomy, texts, config)?;
            if prepared.pairs.is_empty() {
                return Ok(Vec::new());
            }
            let pixels = images
                .lookup_image(img.image_id)
                .ok_or_else(|| Error::MissingRecord(format!("pixels of image {}", img.image_id)))?;
            let mut tape = Tape::<T>::new();
            let (f_ic, f_ia) = state.model.pair_features(&mut tape, &state.params, &prepared, pixels)?;
            let (ic, ia) = (tape.value(f_ic).to_f32_vec(), tape.value(f_ia).to_f32_vec());
            let (dic, dia) = (ic.len() / prepared.pairs.len(), ia.len() / prepared.pairs.len());
            let scores = prepared
                .pairs
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let u = &ia[k * dia..(k + 1) * dia];
                    let raw = memory.score_pair(&ic[k * dic..(k + 1) * dic], u, u)?;
                    let suppressed = suppress(&raw, p.human.score as f64, p.object.score as f64, config.lambda_infer);
                    Ok(PairScores { raw, suppressed })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(predictions_to_triplets(&prepared.pairs, &scores, &ann.taxonomy, config.label_space))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}
