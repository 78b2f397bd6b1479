use super::WorldSpec;
use crate::error::Result;
use crate::registry::Registry;

/// A named world preset.
pub trait WorldProfile: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn spec(&self, seed: u64) -> WorldSpec;
}

/// Low noise, balanced classes.
pub struct Easy;
/// Zipf-distributed classes with a rare tail of one to five samples.
pub struct LongTail;
/// Test features rotated away from the training distribution.
pub struct Shifted;

impl WorldProfile for Easy {
    fn name(&self) -> &'static str {
        "easy"
    }
    fn description(&self) -> &'static str {
        "low noise, balanced classes"
    }
    fn spec(&self, seed: u64) -> WorldSpec {
        WorldSpec { seed, ..WorldSpec::default() }
    }
}

impl WorldProfile for LongTail {
    fn name(&self) -> &'static str {
        "longtail"
    }
    fn description(&self) -> &'static str {
        "Zipf 1.5 class frequencies, rare classes with 1-5 samples"
    }
    fn spec(&self, seed: u64) -> WorldSpec {
        WorldSpec {
            num_verbs: 10,
            num_objects: 7,
            num_hoi: 30,
            zipf_exponent: 1.5,
            feature_noise: 3.0,
            train_images: 200,
            test_images: 100,
            min_test_per_class: 3,
            seed,
            ..WorldSpec::default()
        }
    }
}

impl WorldProfile for Shifted {
    fn name(&self) -> &'static str {
        "shifted"
    }
    fn description(&self) -> &'static str {
        "test-split features rotated away from the training distribution"
    }
    fn spec(&self, seed: u64) -> WorldSpec {
        WorldSpec {
            num_verbs: 6,
            num_objects: 4,
            num_hoi: 12,
            train_images: 300,
            test_images: 60,
            max_pairs_per_image: 2,
            shift_angle: 1.2,
            score_noise: 0.05,
            seed,
            ..WorldSpec::default()
        }
    }
}

pub fn profile_registry() -> Registry<dyn WorldProfile> {
    Registry::<dyn WorldProfile>::new("world profile")
        .with("easy", Box::new(Easy))
        .with("longtail", Box::new(LongTail))
        .with("shifted", Box::new(Shifted))
}

/// Preset `name` with `seed`.
pub fn profile(name: &str, seed: u64) -> Result<WorldSpec> {
    Ok(profile_registry().get(name)?.spec(seed))
}
