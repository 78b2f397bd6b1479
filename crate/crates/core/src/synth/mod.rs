//! Seeded synthetic HOI worlds.
//!
//! Every HOI class owns three unit prototype directions (human, object and
//! union crops) separated by at least `separation` radians. Crop features are
//! noisy copies of the prototypes, detections are jittered ground-truth boxes
//! plus spurious boxes, and text embeddings are class-mean directions. An
//! optional rotation moves the test-split features away from the training
//! distribution while the rendered pixel grids stay in the shared domain.
//! Each image draws from its own derived stream, so output does not depend
//! on the worker count.

mod profiles;
mod render;

pub use profiles::{profile, profile_registry, WorldProfile};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::io::{
    save_annotations, write_feature_store, DatasetAnnotations, FeatureStore, GtPair, ImageRecord, ManifestEntry, Role,
    Taxonomy,
};
use crate::pairing::Detection;

/// Rejection-sampling attempts allowed per prototype.
pub const MAX_ATTEMPTS: usize = 10_000;

/// Image ids of the test split start here.
pub const TEST_ID_OFFSET: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub num_verbs: usize,
    /// Object classes including the human class `0`.
    pub num_objects: usize,
    pub num_hoi: usize,
    pub feature_dim: usize,
    /// `0` gives balanced class counts.
    pub zipf_exponent: f64,
    /// Minimum pairwise angle between prototypes of one role, radians.
    pub separation: f64,
    /// Weight of the direction shared by all classes of one verb (human and
    /// union crops).
    pub verb_share: f64,
    /// Weight of the direction shared by all classes of one object (object
    /// and union crops).
    pub object_share: f64,
    /// Expected norm of the Gaussian added to a unit prototype.
    pub feature_noise: f64,
    /// Same, for the text-embedding rows.
    pub semantic_noise: f64,
    /// Per-coordinate standard deviation of detection boxes, pixels.
    pub box_jitter: f64,
    /// Standard deviation of the shortfall of true detection scores below 1.
    pub score_noise: f64,
    /// Expected spurious detections per image.
    pub spurious_rate: f64,
    pub train_images: usize,
    pub test_images: usize,
    pub max_pairs_per_image: usize,
    pub min_train_per_class: usize,
    pub min_test_per_class: usize,
    /// Side of the square annotation frame, pixels.
    pub image_size: u32,
    /// Side of the rendered pixel grid; `0` skips rendering.
    pub render_size: usize,
    pub pixel_noise: f64,
    /// Rotation applied to test-split features in every coordinate plane.
    pub shift_angle: f64,
    /// Fraction of HOI classes flagged held-out in both splits.
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            num_verbs: 8,
            num_objects: 6,
            num_hoi: 20,
            feature_dim: 32,
            zipf_exponent: 0.0,
            separation: 0.5,
            verb_share: 1.0,
            object_share: 1.0,
            feature_noise: 0.3,
            semantic_noise: 0.3,
            box_jitter: 1.0,
            score_noise: 0.0,
            spurious_rate: 0.5,
            train_images: 120,
            test_images: 60,
            max_pairs_per_image: 3,
            min_train_per_class: 1,
            min_test_per_class: 2,
            image_size: 128,
            render_size: 32,
            pixel_noise: 0.05,
            shift_angle: 0.0,
            heldout_fraction: 0.0,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !self.separation.is_finite() || self.separation <= 0.0 {
            return fail(format!("separation must be positive, got {}", self.separation));
        }
        let noises = [
            ("feature_noise", self.feature_noise),
            ("semantic_noise", self.semantic_noise),
            ("box_jitter", self.box_jitter),
            ("score_noise", self.score_noise),
            ("spurious_rate", self.spurious_rate),
            ("pixel_noise", self.pixel_noise),
            ("zipf_exponent", self.zipf_exponent),
            ("verb_share", self.verb_share),
            ("object_share", self.object_share),
        ];
        for (name, v) in noises {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.num_verbs == 0 || self.num_objects < 2 || self.num_hoi == 0 || self.feature_dim == 0 {
            return fail("need at least one verb, one non-human object, one HOI class and dim > 0".into());
        }
        if self.num_hoi > self.num_verbs * (self.num_objects - 1) {
            return fail(format!(
                "{} HOI classes exceed {} verbs x {} non-human objects",
                self.num_hoi,
                self.num_verbs,
                self.num_objects - 1
            ));
        }
        if self.train_images == 0 || self.test_images == 0 || self.max_pairs_per_image == 0 {
            return fail("image counts and max_pairs_per_image must be positive".into());
        }
        if self.image_size < 16 {
            return fail(format!("image_size {} below 16", self.image_size));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return fail(format!("heldout_fraction {} outside [0,1)", self.heldout_fraction));
        }
        if !self.shift_angle.is_finite() {
            return fail("shift_angle must be finite".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: WorldSpec = crate::io::read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Count and Zipf rank of one HOI class in the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequency {
    pub hoi_class: usize,
    pub rank: usize,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBundle {
    pub spec: WorldSpec,
    pub train: DatasetAnnotations,
    pub test: DatasetAnnotations,
    pub train_features: FeatureStore,
    pub test_features: FeatureStore,
    pub train_images: Option<FeatureStore>,
    pub test_images: Option<FeatureStore>,
    pub frequencies: Vec<ClassFrequency>,
}

/// Paths written by [`write_bundle`].
#[derive(Clone, Debug)]
pub struct BundlePaths {
    pub dir: PathBuf,
}

impl BundlePaths {
    pub fn new(dir: &Path) -> Self {
        BundlePaths { dir: dir.to_path_buf() }
    }
    pub fn annotations(&self, split: &str) -> PathBuf {
        self.dir.join(format!("{split}.json"))
    }
    pub fn features(&self, split: &str) -> PathBuf {
        self.dir.join(format!("{split}.acfb"))
    }
    pub fn images(&self, split: &str) -> PathBuf {
        self.dir.join(format!("{split}.images.acfb"))
    }
    pub fn spec(&self) -> PathBuf {
        self.dir.join("world.json")
    }
    pub fn frequencies(&self) -> PathBuf {
        self.dir.join("frequencies.csv")
    }
}

/// Per-item stream seed: splitmix64 over `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

const TAG_WORLD: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_TEST: u64 = 3;

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub(crate) fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, d);
        if v.iter().any(|&x| x != 0.0) {
            return unit(v);
        }
    }
}

/// `unit(p + noise * g / sqrt(d))`, `g` standard normal.
fn perturb(rng: &mut impl Rng, p: &[f64], noise: f64) -> Vec<f64> {
    if noise == 0.0 {
        return p.to_vec();
    }
    let s = noise / (p.len() as f64).sqrt();
    unit(p.iter().zip(gaussian(rng, p.len())).map(|(a, g)| a + s * g).collect())
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0).acos()
}

/// Largest minimum angle `n` unit vectors can share (regular simplex).
pub fn simplex_bound(n: usize) -> f64 {
    if n < 2 {
        std::f64::consts::PI
    } else {
        (-1.0 / (n as f64 - 1.0)).acos()
    }
}

/// `n` unit vectors in `d` dimensions with pairwise angles of at least
/// `separation`, by rejection sampling. Vector `k` is
/// `unit(shared[k] + s_k)` with `s_k` a fresh unit draw per attempt.
pub fn sample_prototypes(
    rng: &mut impl Rng,
    n: usize,
    d: usize,
    separation: f64,
    shared: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let bound = simplex_bound(n);
    if separation > bound || (d == 1 && n > 2) {
        return Err(Error::Infeasible(format!(
            "separation {separation:.4} rad for {n} prototypes in {d} dimensions exceeds the achievable bound {bound:.4} rad"
        )));
    }
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut best = 0.0f64;
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let mut v = random_unit(rng, d);
            if let Some(base) = shared.get(k) {
                v = unit(v.iter().zip(base).map(|(a, b)| a + b).collect());
            }
            let closest = protos.iter().map(|p| angle(p, &v)).fold(std::f64::consts::PI, f64::min);
            if closest >= separation {
                protos.push(v);
                placed = true;
                break;
            }
            best = best.max(closest);
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "prototype {k} of {n} in {d} dimensions: no draw within {MAX_ATTEMPTS} attempts reached separation \
                 {separation:.4} rad (best {best:.4} rad; simplex bound {bound:.4} rad)"
            )));
        }
    }
    Ok(protos)
}

/// Counts summing to `total` that follow `rank^-s` over `n` ranks, each at
/// least `floor` (excess is taken from the head ranks).
pub fn zipf_counts(total: usize, n: usize, s: f64, floor: usize) -> Result<Vec<usize>> {
    if total < n * floor {
        return Err(Error::Infeasible(format!("{total} pairs cannot give each of {n} classes at least {floor}")));
    }
    let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / z).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    // Largest remainder, earlier rank on ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    for i in 0..n {
        while counts[i] < floor {
            let donor = (0..n).filter(|&j| counts[j] > floor).max_by_key(|&j| (counts[j], usize::MAX - j)).unwrap();
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Rotates every coordinate plane `(2i, 2i+1)` by `theta`.
pub fn rotate(v: &[f64], theta: f64) -> Vec<f64> {
    let (s, c) = theta.sin_cos();
    let mut out = v.to_vec();
    for i in 0..v.len() / 2 {
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = c * a - s * b;
        out[2 * i + 1] = s * a + c * b;
    }
    out
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn quarter(v: f64) -> f32 {
    ((v * 4.0).round() / 4.0) as f32
}

/// Fixed parts of a world shared by both splits.
struct World {
    spec: WorldSpec,
    taxonomy: Taxonomy,
    /// `[role][hoi]` with roles human, object, union.
    protos: [Vec<Vec<f64>>; 3],
    renderer: Option<render::Renderer>,
}

struct Slot {
    hoi: usize,
}

struct ImageOut {
    record: ImageRecord,
    features: Vec<(ManifestEntry, Vec<f32>)>,
    pixels: Option<Vec<f32>>,
}

fn build_taxonomy(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<Taxonomy> {
    let mut combos: Vec<(usize, usize)> =
        (0..spec.num_verbs).flat_map(|v| (1..spec.num_objects).map(move |o| (v, o))).collect();
    combos.shuffle(rng);
    let mut hoi: Vec<(usize, usize)> = combos[..spec.num_hoi].to_vec();
    hoi.sort();
    let mut objects = vec!["person".to_string()];
    objects.extend((1..spec.num_objects).map(|o| format!("object{o:02}")));
    Taxonomy::new(
        (0..spec.num_verbs).map(|v| format!("verb{v:02}")).collect(),
        objects,
        hoi,
        0,
        vec![false; spec.num_hoi],
    )
}

impl World {
    fn layout(&self, rng: &mut ChaCha8Rng, k: usize) -> Vec<(BBox, BBox)> {
        let w = self.spec.image_size as f64;
        let sw = w / k as f64;
        (0..k)
            .map(|j| {
                let x0 = j as f64 * sw;
                let hx1 = x0 + rng.random_range(0.05..0.15) * sw;
                let hx2 = hx1 + rng.random_range(0.3..0.4) * sw;
                let hy1 = rng.random_range(0.1..0.3) * w;
                let hy2 = hy1 + rng.random_range(0.45..0.65) * w;
                let ox1 = hx2 - rng.random_range(0.0..0.1) * sw;
                let ox2 = (ox1 + rng.random_range(0.25..0.4) * sw).min(x0 + sw - 0.5);
                let oy1 = rng.random_range(0.3..0.6) * w;
                let oy2 = oy1 + rng.random_range(0.15..0.3) * w;
                (
                    BBox::new(quarter(hx1), quarter(hy1), quarter(hx2), quarter(hy2)),
                    BBox::new(quarter(ox1), quarter(oy1), quarter(ox2), quarter(oy2)),
                )
            })
            .collect()
    }

    fn jitter(&self, rng: &mut ChaCha8Rng, b: &BBox) -> BBox {
        let w = self.spec.image_size as f32;
        let s = self.spec.box_jitter;
        let mut d = || s * rng.sample::<f64, _>(StandardNormal);
        let mut j = BBox::new(
            quarter(b.x1 as f64 + d()),
            quarter(b.y1 as f64 + d()),
            quarter(b.x2 as f64 + d()),
            quarter(b.y2 as f64 + d()),
        )
        .clamp_to(w, w);
        if !j.is_valid() || j.area() < 1.0 {
            j = *b;
        }
        j
    }

    fn true_score(&self, rng: &mut ChaCha8Rng) -> f32 {
        let noise = (self.spec.score_noise * rng.sample::<f64, _>(StandardNormal)).abs();
        (1.0 - noise).clamp(0.21, 1.0) as f32
    }

    fn spurious(&self, rng: &mut ChaCha8Rng) -> Detection {
        let w = self.spec.image_size as f64;
        let bw = rng.random_range(0.1..0.3) * w;
        let bh = rng.random_range(0.1..0.3) * w;
        let x1 = rng.random_range(0.0..w - bw);
        let y1 = rng.random_range(0.0..w - bh);
        Detection {
            bbox: BBox::new(quarter(x1), quarter(y1), quarter(x1 + bw), quarter(y1 + bh)),
            score: rng.random_range(0.2..0.55) as f32,
            class_id: rng.random_range(0..self.spec.num_objects),
        }
    }

    /// One image; `shift` rotates the stored features of this split.
    fn image(&self, image_id: u64, slots: &[Slot], seed: u64, shift: f64) -> ImageOut {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = &self.spec;
        let d = spec.feature_dim;
        let tax = &self.taxonomy;
        let boxes = self.layout(&mut rng, slots.len());
        let store = |v: &[f64]| to_f32(&if shift != 0.0 { rotate(v, shift) } else { v.to_vec() });

        let mut features = Vec::new();
        let mut gt_pairs = Vec::with_capacity(slots.len());
        // Latent crop vectors per pair, in the unshifted domain.
        let mut latents = Vec::with_capacity(slots.len());
        for (slot, (hb, ob)) in slots.iter().zip(&boxes) {
            let (verb, object) = tax.hoi_classes[slot.hoi];
            let lat: [Vec<f64>; 3] =
                std::array::from_fn(|r| perturb(&mut rng, &self.protos[r][slot.hoi], spec.feature_noise));
            let ub = hb.union(ob);
            features.push((ManifestEntry::for_box(image_id, Role::Human, *hb), store(&lat[0])));
            features.push((ManifestEntry::for_box(image_id, Role::Object, *ob), store(&lat[1])));
            features.push((ManifestEntry::for_box(image_id, Role::Union, ub), store(&lat[2])));
            gt_pairs.push(GtPair { human_box: *hb, object_box: *ob, object_class: object, verb_set: vec![verb] });
            latents.push(lat);
        }

        // Detections with their source `(pair, role)`; spurious boxes last.
        let mut dets: Vec<(Detection, Option<(usize, usize)>)> = Vec::new();
        for (p, (slot, (hb, ob))) in slots.iter().zip(&boxes).enumerate() {
            let object = tax.hoi_classes[slot.hoi].1;
            let h = Detection {
                bbox: self.jitter(&mut rng, hb),
                score: self.true_score(&mut rng),
                class_id: tax.human_class,
            };
            let o = Detection { bbox: self.jitter(&mut rng, ob), score: self.true_score(&mut rng), class_id: object };
            dets.push((h, Some((p, 0))));
            dets.push((o, Some((p, 1))));
        }
        let whole = spec.spurious_rate.floor() as usize;
        let extra = whole + rng.random_bool(spec.spurious_rate - whole as f64) as usize;
        for _ in 0..extra {
            dets.push((self.spurious(&mut rng), None));
        }

        // Box-anchored records for every role a detection can take. A
        // detection carries its source latent in its own role and in the
        // union with its partner; every other combination is background.
        let mut det_features: Vec<(ManifestEntry, Vec<f32>)> = Vec::new();
        for (det, src) in &dets {
            if det.class_id == tax.human_class {
                let v = match src {
                    Some((p, 0)) => latents[*p][0].clone(),
                    _ => random_unit(&mut rng, d),
                };
                det_features.push((ManifestEntry::for_box(image_id, Role::Human, det.bbox), store(&v)));
            }
            let v = match src {
                Some((p, 1)) => latents[*p][1].clone(),
                _ => random_unit(&mut rng, d),
            };
            det_features.push((ManifestEntry::for_box(image_id, Role::Object, det.bbox), store(&v)));
        }
        for (hi, (h, hsrc)) in dets.iter().enumerate() {
            if h.class_id != tax.human_class {
                continue;
            }
            for (oi, (o, osrc)) in dets.iter().enumerate() {
                if oi == hi {
                    continue;
                }
                let v = match (hsrc, osrc) {
                    (Some((p, 0)), Some((q, 1))) if p == q => latents[*p][2].clone(),
                    _ => random_unit(&mut rng, d),
                };
                det_features.push((ManifestEntry::for_box(image_id, Role::Union, h.bbox.union(&o.bbox)), store(&v)));
            }
        }
        features.extend(det_features);

        let pixels = self.renderer.as_ref().map(|r| {
            let regions: Vec<_> = boxes
                .iter()
                .zip(&latents)
                .map(|((hb, ob), lat)| render::Region {
                    human: *hb,
                    object: *ob,
                    codes: [&lat[0][..], &lat[1][..], &lat[2][..]],
                })
                .collect();
            r.render(&mut rng, spec.image_size as f64, &regions)
        });

        ImageOut {
            record: ImageRecord {
                image_id,
                width: spec.image_size,
                height: spec.image_size,
                gt_pairs,
                detections: dets.into_iter().map(|(d, _)| d).collect(),
            },
            features,
            pixels,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn split(
        &self,
        rng: &mut ChaCha8Rng,
        images: usize,
        floor: usize,
        rank_of: &[usize],
        tag: u64,
        id_offset: u64,
        shift: f64,
    ) -> Result<(Vec<ImageOut>, Vec<usize>)> {
        let spec = &self.spec;
        let per_image: Vec<usize> = (0..images).map(|_| rng.random_range(1..=spec.max_pairs_per_image)).collect();
        let total: usize = per_image.iter().sum();
        let by_rank = zipf_counts(total, spec.num_hoi, spec.zipf_exponent, floor)?;
        let mut labels: Vec<usize> = Vec::with_capacity(total);
        let mut counts = vec![0usize; spec.num_hoi];
        for (h, &r) in rank_of.iter().enumerate() {
            counts[h] = by_rank[r];
            labels.extend(std::iter::repeat_n(h, by_rank[r]));
        }
        labels.shuffle(rng);
        let mut slots: Vec<Vec<Slot>> = Vec::with_capacity(images);
        let mut next = labels.into_iter();
        for &k in &per_image {
            slots.push((0..k).map(|_| Slot { hoi: next.next().unwrap() }).collect());
        }
        let out = slots
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.image(id_offset + i as u64, s, derive_seed(spec.seed, tag, i as u64), shift))
            .collect();
        Ok((out, counts))
    }
}

fn assemble(
    taxonomy: &Taxonomy,
    outs: Vec<ImageOut>,
    dim: usize,
    pixel_dim: Option<usize>,
    shared: &[(ManifestEntry, Vec<f32>)],
) -> Result<(DatasetAnnotations, FeatureStore, Option<FeatureStore>)> {
    let mut store = FeatureStore::new(dim);
    for (e, v) in shared {
        store.insert(e.clone(), v.clone())?;
    }
    let mut images = pixel_dim.map(FeatureStore::new);
    let mut records = Vec::with_capacity(outs.len());
    for out in outs {
        for (e, v) in out.features {
            store.insert_if_absent(e, v)?;
        }
        if let (Some(img), Some(px)) = (images.as_mut(), out.pixels) {
            img.insert(ManifestEntry::for_image(out.record.image_id), px)?;
        }
        records.push(out.record);
    }
    let ann = DatasetAnnotations { taxonomy: taxonomy.clone(), images: records, hoi_counts: Vec::new() }.validated()?;
    Ok((ann, store, images))
}

/// Generates a complete world. Identical specs give identical bundles.
pub fn generate(spec: &WorldSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, TAG_WORLD, 0));
    let mut taxonomy = build_taxonomy(spec, &mut rng)?;
    let (n, d) = (spec.num_hoi, spec.feature_dim);
    // Shared verb and object directions, then per-class prototypes for the
    // human (verb), object (object) and union (both) crops.
    let verb_dirs: Vec<Vec<f64>> = (0..spec.num_verbs).map(|_| random_unit(&mut rng, d)).collect();
    let object_dirs: Vec<Vec<f64>> = (0..spec.num_objects).map(|_| random_unit(&mut rng, d)).collect();
    let shared = |wv: f64, wo: f64| -> Vec<Vec<f64>> {
        taxonomy
            .hoi_classes
            .iter()
            .map(|&(v, o)| verb_dirs[v].iter().zip(&object_dirs[o]).map(|(a, b)| wv * a + wo * b).collect())
            .collect()
    };
    let (human_base, object_base, union_base) =
        (shared(spec.verb_share, 0.0), shared(0.0, spec.object_share), shared(spec.verb_share, spec.object_share));
    let protos = [
        sample_prototypes(&mut rng, n, d, spec.separation, &human_base)?,
        sample_prototypes(&mut rng, n, d, spec.separation, &object_base)?,
        sample_prototypes(&mut rng, n, d, spec.separation, &union_base)?,
    ];

    // Text rows: per-verb means of the union prototypes, per-HOI union
    // prototypes, one direction per object class; all perturbed.
    let mut shared = Vec::new();
    for v in 0..spec.num_verbs {
        let mut mean = vec![0.0; d];
        for (h, &(hv, _)) in taxonomy.hoi_classes.iter().enumerate() {
            if hv == v {
                mean.iter_mut().zip(&protos[2][h]).for_each(|(m, p)| *m += p);
            }
        }
        let base = if mean.iter().all(|&x| x == 0.0) { random_unit(&mut rng, d) } else { unit(mean) };
        shared.push((
            ManifestEntry::for_index(Role::Semantic, v),
            to_f32(&perturb(&mut rng, &base, spec.semantic_noise)),
        ));
    }
    for (h, proto) in protos[2].iter().enumerate().take(n) {
        let row = perturb(&mut rng, proto, spec.semantic_noise);
        shared.push((ManifestEntry::for_index(Role::SemanticHoi, h), to_f32(&row)));
    }
    for o in 0..spec.num_objects {
        shared.push((ManifestEntry::for_index(Role::ObjectText, o), to_f32(&random_unit(&mut rng, d))));
    }

    let mut rank_of: Vec<usize> = (0..n).collect();
    rank_of.shuffle(&mut rng);
    let renderer =
        (spec.render_size > 0).then(|| render::Renderer::new(&mut rng, spec.render_size, d, spec.pixel_noise));

    let mut heldout = vec![false; n];
    let k = (spec.heldout_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &h in &order[..k] {
        heldout[h] = true;
    }
    taxonomy.set_heldout_flags(heldout)?;

    let world = World { spec: spec.clone(), taxonomy, protos, renderer };
    let (train_out, train_counts) =
        world.split(&mut rng, spec.train_images, spec.min_train_per_class, &rank_of, TAG_TRAIN, 0, 0.0)?;
    let (test_out, test_counts) = world.split(
        &mut rng,
        spec.test_images,
        spec.min_test_per_class,
        &rank_of,
        TAG_TEST,
        TEST_ID_OFFSET,
        spec.shift_angle,
    )?;

    let pixel_dim = world.renderer.as_ref().map(render::Renderer::len);
    let (train, train_features, train_images) = assemble(&world.taxonomy, train_out, d, pixel_dim, &shared)?;
    // Rare flags always follow the training counts.
    let mut test_tax = world.taxonomy.clone();
    test_tax.set_rare_flags(train.taxonomy.rare_flags.clone())?;
    let (test, test_features, test_images) = assemble(&test_tax, test_out, d, pixel_dim, &shared)?;

    let frequencies = (0..n)
        .map(|h| ClassFrequency {
            hoi_class: h,
            rank: rank_of[h] + 1,
            train_count: train_counts[h],
            test_count: test_counts[h],
        })
        .collect();
    Ok(SyntheticBundle {
        spec: spec.clone(),
        train,
        test,
        train_features,
        test_features,
        train_images,
        test_images,
        frequencies,
    })
}

/// Writes `train.json`, `test.json`, `train.acfb`, `test.acfb` (with
/// manifests), the pixel stores when rendered, `world.json` and
/// `frequencies.csv` into `dir`.
pub fn write_bundle(bundle: &SyntheticBundle, dir: &Path) -> Result<BundlePaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = BundlePaths::new(dir);
    save_annotations(&paths.annotations("train"), &bundle.train)?;
    save_annotations(&paths.annotations("test"), &bundle.test)?;
    write_feature_store(&bundle.train_features, &paths.features("train"))?;
    write_feature_store(&bundle.test_features, &paths.features("test"))?;
    if let Some(s) = &bundle.train_images {
        write_feature_store(s, &paths.images("train"))?;
    }
    if let Some(s) = &bundle.test_images {
        write_feature_store(s, &paths.images("test"))?;
    }
    crate::io::write_json(&paths.spec(), &bundle.spec)?;
    let mut csv = String::from("hoi_class,verb,object,rank,train_count,test_count\n");
    for f in &bundle.frequencies {
        let (v, o) = bundle.train.taxonomy.hoi_classes[f.hoi_class];
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.hoi_class,
            bundle.train.taxonomy.verbs[v],
            bundle.train.taxonomy.objects[o],
            f.rank,
            f.train_count,
            f.test_count
        ));
    }
    let fp = paths.frequencies();
    std::fs::write(&fp, csv).map_err(|e| Error::io(&fp, e))?;
    Ok(paths)
}
