use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::registry::Registry;

/// Decides the order in which candidate pairs are offered to the per-class
/// shot budgets during memory construction.
pub trait ShotSelector: Send + Sync {
    fn name(&self) -> &'static str;
    fn order(&self, candidates: usize, seed: u64) -> Vec<usize>;
}

/// Ascending `(image_id, pair order)`.
pub struct DatasetOrder;

/// Seeded uniform permutation of the candidates.
pub struct UniformSample;

impl ShotSelector for DatasetOrder {
    fn name(&self) -> &'static str {
        "dataset-order"
    }

    fn order(&self, candidates: usize, _seed: u64) -> Vec<usize> {
        (0..candidates).collect()
    }
}

impl ShotSelector for UniformSample {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn order(&self, candidates: usize, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..candidates).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5e1e_c7ed));
        idx
    }
}

pub fn selector_registry() -> Registry<dyn ShotSelector> {
    Registry::<dyn ShotSelector>::new("shot selector")
        .with("dataset-order", Box::new(DatasetOrder))
        .with("uniform", Box::new(UniformSample))
}
