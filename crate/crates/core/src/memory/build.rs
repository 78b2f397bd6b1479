use super::{normalized_f32, ConceptMemory, RowProvenance, ShotSelector};
use crate::error::{Error, Result};
use crate::io::{DatasetAnnotations, FeatureStore, LabelSpace, Role, RunConfig, Taxonomy};

struct Candidate {
    image_id: u64,
    pair_index: usize,
    /// Non-held-out HOI classes of the pair.
    classes: Vec<usize>,
    /// Non-held-out labels in the configured label space.
    labels: Vec<usize>,
}

fn candidates(ann: &DatasetAnnotations, space: LabelSpace) -> Vec<Candidate> {
    let tax = &ann.taxonomy;
    let mut images: Vec<_> = ann.images.iter().collect();
    images.sort_by_key(|i| i.image_id);
    let mut out = Vec::new();
    for img in images {
        for (pi, gt) in img.gt_pairs.iter().enumerate() {
            let mut classes = Vec::new();
            let mut labels = Vec::new();
            for &v in &gt.verb_set {
                let Some(hoi) = tax.hoi_index(v, gt.object_class) else {
                    continue;
                };
                if tax.is_heldout(hoi) || classes.contains(&hoi) {
                    continue;
                }
                classes.push(hoi);
                labels.push(match space {
                    LabelSpace::Verb => v,
                    LabelSpace::Hoi => hoi,
                });
            }
            if !classes.is_empty() {
                out.push(Candidate { image_id: img.image_id, pair_index: pi, classes, labels });
            }
        }
    }
    out
}

fn label_width(tax: &Taxonomy, space: LabelSpace) -> usize {
    match space {
        LabelSpace::Verb => tax.num_verbs(),
        LabelSpace::Hoi => tax.num_hoi(),
    }
}

/// Caches at most `config.memory_shots` ground-truth pairs per HOI class.
///
/// Candidates are offered to the per-class budgets in the order chosen by
/// `selector`; a pair is kept when any of its classes still has budget and
/// is charged to every such class. Kept rows appear in dataset order.
pub fn build_memory(
    ann: &DatasetAnnotations,
    features: &FeatureStore,
    config: &RunConfig,
    selector: &dyn ShotSelector,
) -> Result<ConceptMemory> {
    let tax = &ann.taxonomy;
    let space = config.label_space;
    let cands = candidates(ann, space);
    if cands.is_empty() {
        return Err(Error::Empty("no HOI class has a ground-truth sample outside the held-out set".into()));
    }

    let mut budget = vec![config.memory_shots; tax.num_hoi()];
    let mut charged: Vec<Option<Vec<usize>>> = (0..cands.len()).map(|_| None).collect();
    for i in selector.order(cands.len(), config.seed) {
        let open: Vec<usize> = cands[i].classes.iter().copied().filter(|&c| budget[c] > 0).collect();
        if open.is_empty() {
            continue;
        }
        for &c in &open {
            budget[c] -= 1;
        }
        charged[i] = Some(open);
    }

    let d = features.dim();
    let width = label_width(tax, space);
    let mut memory = ConceptMemory::new(d, width, config);
    let images: std::collections::HashMap<u64, _> = ann.images.iter().map(|i| (i.image_id, i)).collect();
    for (cand, contributed) in cands.iter().zip(charged) {
        let Some(contributed) = contributed else {
            continue;
        };
        let gt = &images[&cand.image_id].gt_pairs[cand.pair_index];
        let union = gt.human_box.union(&gt.object_box);
        let fetch = |role: Role, b| {
            features.lookup_box(cand.image_id, role, b).ok_or_else(|| {
                Error::MissingRecord(format!("{role:?} feature for image {} pair {}", cand.image_id, cand.pair_index))
            })
        };
        let (fh, fo, fu) =
            (fetch(Role::Human, &gt.human_box)?, fetch(Role::Object, &gt.object_box)?, fetch(Role::Union, &union)?);
        let mut key_ic = Vec::with_capacity(2 * d);
        key_ic.extend_from_slice(fh);
        key_ic.extend_from_slice(fo);
        let key_ia = fu.to_vec();
        let (key_ic, key_ia) =
            if config.normalize_keys { (normalized_f32(&key_ic), normalized_f32(&key_ia)) } else { (key_ic, key_ia) };
        let mut label = vec![0.0f32; width];
        for &l in &cand.labels {
            label[l] = 1.0;
        }
        let prov = RowProvenance { image_id: cand.image_id, pair_index: cand.pair_index, contributed };
        memory.ic.push_row(key_ic, label.clone(), Some(prov.clone()));
        memory.ia.push_row(key_ia, label, Some(prov));
    }

    let role = match space {
        LabelSpace::Verb => Role::Semantic,
        LabelSpace::Hoi => Role::SemanticHoi,
    };
    for a in 0..width {
        let row = features
            .lookup_index(role, a)
            .ok_or_else(|| Error::MissingRecord(format!("{role:?} embedding for label {a}")))?;
        memory.push_semantic_row(row);
    }
    log::info!("memory built: {} rows, {} labels, K={}", memory.ia.rows(), width, config.memory_shots);
    Ok(memory)
}
