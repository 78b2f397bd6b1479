use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::examples::{prepare_image, PreparedImage};
use super::finetune::TrainState;
use crate::bbox::BBox;
use crate::error::Result;
use crate::io::{EncoderConfig, FeatureStore, ImageRecord, ManifestEntry, Role, RunConfig, Taxonomy};
use crate::kernel::{finite_diff_check, GradCheckReport, ParamSet};
use crate::memory::{normalized_f32, ConceptMemory, MemoryBranch, MemoryParts};
use crate::pairing::Detection;

pub const TOY_EMBED_DIM: usize = 8;
const TOY_LABELS: usize = 3;
const TOY_ROWS: usize = 4;

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f32> {
    let raw: Vec<f32> = (0..rows * cols).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    raw.chunks(cols).flat_map(normalized_f32).collect()
}

pub(super) fn toy_memory(rng: &mut ChaCha8Rng, config: &RunConfig) -> Result<ConceptMemory> {
    let d = TOY_EMBED_DIM;
    let mut labels = vec![0.0f32; TOY_ROWS * TOY_LABELS];
    for r in 0..TOY_ROWS {
        labels[r * TOY_LABELS + r % TOY_LABELS] = 1.0;
        if r == TOY_ROWS - 1 {
            labels[r * TOY_LABELS] = 1.0;
        }
    }
    let parts = MemoryParts {
        ic: MemoryBranch::from_matrices(2 * d, TOY_LABELS, unit_rows(rng, TOY_ROWS, 2 * d), labels.clone())?,
        ia: MemoryBranch::from_matrices(d, TOY_LABELS, unit_rows(rng, TOY_ROWS, d), labels)?,
        w_t: unit_rows(rng, TOY_LABELS, d),
        w_t_cols: d,
    };
    ConceptMemory::from_parts(parts, config)
}

/// A prepared image with its pixels and flattened targets.
type ToyImage = (PreparedImage, Vec<f32>, Vec<f32>);

pub(super) fn toy_images(rng: &mut ChaCha8Rng, enc: &EncoderConfig, config: &RunConfig) -> Result<Vec<ToyImage>> {
    let tax = Taxonomy::new(
        (0..TOY_LABELS).map(|v| format!("verb{v}")).collect(),
        vec!["person".into(), "thing".into(), "tool".into()],
        vec![(0, 1), (1, 1), (2, 2)],
        0,
        vec![false; 3],
    )?;
    let mut texts = FeatureStore::new(TOY_EMBED_DIM);
    for (c, row) in unit_rows(rng, 3, TOY_EMBED_DIM).chunks(TOY_EMBED_DIM).enumerate() {
        texts.insert(ManifestEntry::for_index(Role::ObjectText, c), row.to_vec())?;
    }
    let s = enc.image_size as f32;
    let mut out = Vec::new();
    for image_id in 0..2u64 {
        let mut detections = Vec::new();
        for class_id in [0, 1, 2] {
            let (x, y) = (rng.random_range(0.0..s * 0.5), rng.random_range(0.0..s * 0.5));
            let (w, h) = (rng.random_range(4.0..s * 0.5), rng.random_range(4.0..s * 0.5));
            detections.push(Detection {
                bbox: BBox::new(x, y, x + w, y + h),
                score: rng.random_range(0.5..0.95),
                class_id,
            });
        }
        let record = ImageRecord {
            image_id,
            width: enc.image_size as u32,
            height: enc.image_size as u32,
            gt_pairs: vec![],
            detections,
        };
        let prepared = prepare_image(&record, &tax, &texts, config)?;
        let pixels =
            (0..enc.channels * enc.image_size * enc.image_size).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let targets = (0..prepared.pairs.len() * TOY_LABELS).map(|_| rng.random_bool(0.4) as u8 as f32).collect();
        out.push((prepared, pixels, targets));
    }
    Ok(out)
}

/// Finite-difference check of the full fine-tuning loss (encoder with
/// adapters, ROI-Align, memory scoring, suppression with `lambda_train`,
/// focal loss) over every adapter parameter and both key matrices, in f64
/// on the toy encoder. `W_up` is drawn like every other projection
/// (`N(0, 1/fan_in)`) so that every adapter parameter influences the loss.
pub fn toy_gradcheck(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let config = RunConfig::default();
    let enc = EncoderConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let memory = toy_memory(&mut rng, &config)?;
    let images = toy_images(&mut rng, &enc, &config)?;
    let mut state = TrainState::<f64>::new(&memory, &enc, seed)?;
    let std = 1.0 / (enc.adapter_width as f64).sqrt();
    for a in state.model.encoder.adapters().into_iter().flatten() {
        for w in state.params.get_mut(a.up_weight()).data_mut() {
            *w = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let normalizer: f64 = images.iter().map(|(_, _, t)| t.len()).sum::<usize>() as f64;
    let model = &state.model;
    let loss = |params: &ParamSet<f64>, backward: Option<&mut ParamSet<f64>>| -> Result<f64> {
        let mut total = 0.0;
        let mut sink = backward;
        for (img, pixels, targets) in &images {
            let mut tape = crate::kernel::Tape::new();
            let l = model.image_loss(
                &mut tape,
                params,
                img,
                pixels,
                targets,
                config.lambda_train,
                &config.focal,
                normalizer,
            )?;
            total += tape.value(l).data()[0];
            if let Some(p) = sink.as_deref_mut() {
                let grads = tape.backward(l)?;
                for (id, g) in grads.param_grads(&tape) {
                    p.accumulate_grad(id, &g);
                }
            }
        }
        Ok(total)
    };
    let mut params = state.params.clone();
    params.zero_grad();
    loss(&state.params, Some(&mut params))?;
    let report = finite_diff_check(&mut params, eps, |p| loss(p, None))?;
    state.params = params;
    Ok(report)
}
