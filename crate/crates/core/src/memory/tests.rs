use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bbox::BBox;
use crate::io::{DatasetAnnotations, FeatureStore, GtPair, ImageRecord, ManifestEntry, Role, Taxonomy};

fn config(shots: usize) -> RunConfig {
    RunConfig { memory_shots: shots, ..RunConfig::default() }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn random_memory(rng: &mut ChaCha8Rng, m: usize, a: usize, d: usize, gammas: Gammas) -> ConceptMemory {
    let hot = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        let mut v: Vec<f32> = (0..m * a).map(|_| (rng.random::<f32>() < 0.3) as u8 as f32).collect();
        for r in 0..m {
            v[r * a + rng.random_range(0..a)] = 1.0;
        }
        v
    };
    let norm_rows = |v: Vec<f32>, cols: usize| -> Vec<f32> { v.chunks(cols).flat_map(normalized_f32).collect() };
    let parts = MemoryParts {
        ic: MemoryBranch::from_matrices(2 * d, a, norm_rows(random_vec(rng, m * 2 * d), 2 * d), hot(rng)).unwrap(),
        ia: MemoryBranch::from_matrices(d, a, norm_rows(random_vec(rng, m * d), d), hot(rng)).unwrap(),
        w_t: norm_rows(random_vec(rng, a * d), d),
        w_t_cols: d,
    };
    ConceptMemory::from_parts(parts, &config(16)).unwrap().with_gammas(gammas)
}

/// Element-wise triple loop over the literal score formula.
#[allow(clippy::needless_range_loop)]
fn oracle(m: &ConceptMemory, f_ic: &[f32], f_ia: &[f32], f_u: &[f32]) -> Vec<f64> {
    let unit = |v: &[f32]| {
        let n: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        v.iter().map(|&x| x as f64 / n).collect::<Vec<f64>>()
    };
    let (q_ic, q_ia, q_u) = (unit(f_ic), unit(f_ia), unit(f_u));
    let mut s = vec![0.0; m.labels()];
    for (a, out) in s.iter_mut().enumerate() {
        for (branch, q, g) in [(&m.ic, &q_ic, m.gammas.ic), (&m.ia, &q_ia, m.gammas.ia)] {
            for r in 0..branch.rows() {
                let mut dot = 0.0;
                for j in 0..branch.dim() {
                    dot += q[j] * branch.key(r)[j] as f64;
                }
                *out += g * dot * branch.value(r)[a] as f64;
            }
        }
        let mut dot = 0.0;
        for j in 0..m.embed_dim() {
            dot += q_u[j] * m.semantic_row(a)[j] as f64;
        }
        *out += m.gammas.t * dot;
    }
    s
}

#[test]
fn identical_key_gives_one_hot_score() {
    let key = vec![0.6f32, 0.0, 0.8, 0.0];
    let parts = MemoryParts {
        ic: MemoryBranch::from_matrices(4, 3, key.clone(), vec![0.0, 1.0, 0.0]).unwrap(),
        ia: MemoryBranch::from_matrices(2, 3, vec![1.0, 0.0], vec![0.0, 1.0, 0.0]).unwrap(),
        w_t: vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        w_t_cols: 2,
    };
    let m = ConceptMemory::from_parts(parts, &config(1)).unwrap().with_gammas(Gammas { ic: 1.0, ia: 0.0, t: 0.0 });
    let s = m.score_pair(&key, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
    assert!((s[1] - 1.0).abs() < 1e-7);
    assert_eq!(s[0], 0.0);
    assert_eq!(s[2], 0.0);
}

#[test]
fn zero_gammas_give_zero_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_memory(&mut rng, 5, 4, 3, Gammas { ic: 0.0, ia: 0.0, t: 0.0 });
    let s = m.score_pair(&random_vec(&mut rng, 6), &random_vec(&mut rng, 3), &random_vec(&mut rng, 3)).unwrap();
    assert!(s.iter().all(|&x| x == 0.0));
}

#[test]
fn scores_match_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (m, a, d) = (rng.random_range(1..=20), rng.random_range(1..=10), rng.random_range(1..=8));
        let g =
            Gammas { ic: rng.random_range(0.0..2.0), ia: rng.random_range(0.0..2.0), t: rng.random_range(0.0..2.0) };
        let mem = random_memory(&mut rng, m, a, d, g);
        let (f_ic, f_ia, f_u) = (random_vec(&mut rng, 2 * d), random_vec(&mut rng, d), random_vec(&mut rng, d));
        let got = mem.score_pair(&f_ic, &f_ia, &f_u).unwrap();
        for (x, y) in got.iter().zip(oracle(&mem, &f_ic, &f_ia, &f_u)) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_memory(&mut rng, 2, 2, 3, Gammas::default());
    assert!(matches!(m.score_pair(&[1.0; 5], &[1.0; 3], &[1.0; 3]), Err(Error::Shape { .. })));
}

#[test]
fn suppression_closed_form() {
    assert!(suppress(&[0.0; 3], 1.0, 1.0, 2.8).iter().all(|&x| x == 0.5));
    let expected = 0.5 * (2.8 * 0.4f64.ln()).exp();
    let got = suppress(&[0.0], 0.8, 0.5, 2.8)[0];
    assert!((got - expected).abs() < 1e-12);
    assert!((got - 0.038436).abs() < 1e-6);
    let raw = [-3.0f64, 0.2, 5.0];
    let plain: Vec<f64> = raw.iter().map(|&r| 1.0 / (1.0 + (-r).exp())).collect();
    for (x, y) in suppress(&raw, 0.1, 0.3, 0.0).iter().zip(plain) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn added_class_scores_by_semantic_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = random_memory(&mut rng, 5, 4, 6, Gammas { ic: 0.7, ia: 0.4, t: 1.3 });
    let row = random_vec(&mut rng, 6);
    assert_eq!(m.add_semantic_class(&row).unwrap(), 4);
    assert_eq!((m.labels(), m.ic.labels()), (5, 5));
    let f_u = random_vec(&mut rng, 6);
    let s = m.score_pair(&random_vec(&mut rng, 12), &f_u, &f_u).unwrap();
    let (a, b) = (normalized(&row), normalized(&f_u));
    let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    assert!((s[4] - 1.3 * cos).abs() < 1e-6);
    assert!(m.add_semantic_class(&[1.0; 5]).is_err());
}

#[test]
fn duplicate_semantic_row_scores_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = random_memory(&mut rng, 3, 2, 4, Gammas { ic: 0.0, ia: 0.0, t: 1.0 });
    let row = m.semantic_row(1).to_vec();
    m.add_semantic_class(&row).unwrap();
    let f = random_vec(&mut rng, 4);
    let s = m.score_pair(&random_vec(&mut rng, 8), &f, &f).unwrap();
    assert!((s[1] - s[2]).abs() < 1e-12);
}

#[test]
fn extended_memory_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut m = random_memory(&mut rng, 5, 4, 3, Gammas::default());
    m.add_semantic_class(&random_vec(&mut rng, 3)).unwrap();
    let bytes = encode_memory(&m);
    let back = ConceptMemory::from_parts(decode_memory(&bytes).unwrap(), &config(16)).unwrap();
    assert_eq!(back, m);
    assert_eq!(encode_memory(&back), bytes);
}

#[test]
fn codec_rejects_damage() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bytes = encode_memory(&random_memory(&mut rng, 2, 2, 2, Gammas::default()));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_memory(&bad).unwrap_err().to_string().contains("magic"));
    assert!(decode_memory(&bytes[..bytes.len() - 1]).unwrap_err().to_string().contains("truncated"));
    let mut long = bytes.clone();
    long.push(0);
    assert!(decode_memory(&long).unwrap_err().to_string().contains("trailing"));
    let mut v2 = bytes;
    v2[4] = 2;
    assert!(decode_memory(&v2).unwrap_err().to_string().contains("version"));
}

#[test]
fn header_layout_is_fixed() {
    let parts = MemoryParts {
        ic: MemoryBranch::from_matrices(2, 1, vec![1.0, 0.0], vec![1.0]).unwrap(),
        ia: MemoryBranch::from_matrices(1, 1, vec![1.0], vec![1.0]).unwrap(),
        w_t: vec![1.0],
        w_t_cols: 1,
    };
    let m = ConceptMemory::from_parts(parts, &config(1)).unwrap();
    let one = 1.0f32.to_le_bytes();
    let zero = 0.0f32.to_le_bytes();
    let mut expected = b"ACMB\x01".to_vec();
    for chunk in [
        &[1u8, 0, 0, 0, 2, 0, 0, 0][..],
        &one,
        &zero,
        &[1, 0, 0, 0],
        &one,
        &[1, 0, 0, 0, 1, 0, 0, 0],
        &one,
        &[1, 0, 0, 0],
        &one,
        &[1, 0, 0, 0, 1, 0, 0, 0],
        &one,
    ] {
        expected.extend_from_slice(chunk);
    }
    assert_eq!(encode_memory(&m), expected);
}

// Construction fixtures: each pair gets distinct, deterministic features.

fn world(
    pairs_per_image: Vec<Vec<(usize, Vec<usize>)>>,
    hoi: Vec<(usize, usize)>,
    heldout: Vec<bool>,
) -> (DatasetAnnotations, FeatureStore) {
    let tax = Taxonomy::new(
        (0..8).map(|i| format!("v{i}")).collect(),
        vec!["person".into(), "cup".into(), "bike".into()],
        hoi,
        0,
        heldout,
    )
    .unwrap();
    let d = 4;
    let mut store = FeatureStore::new(d);
    let mut images = Vec::new();
    for (i, pairs) in pairs_per_image.into_iter().enumerate() {
        let image_id = 100 + i as u64;
        let mut gt_pairs = Vec::new();
        for (p, (obj, verbs)) in pairs.into_iter().enumerate() {
            let off = p as f32 * 10.0;
            let h = BBox::new(off, 0.0, off + 5.0, 5.0);
            let o = BBox::new(off + 2.0, 2.0, off + 9.0, 9.0);
            for (role, b) in [(Role::Human, h), (Role::Object, o), (Role::Union, h.union(&o))] {
                let v = vec![image_id as f32, p as f32 + 1.0, role as u8 as f32, 1.0];
                store.insert_if_absent(ManifestEntry::for_box(image_id, role, b), v).unwrap();
            }
            gt_pairs.push(GtPair { human_box: h, object_box: o, object_class: obj, verb_set: verbs });
        }
        images.push(ImageRecord { image_id, width: 100, height: 100, gt_pairs, detections: vec![] });
    }
    for v in 0..8 {
        store.insert(ManifestEntry::for_index(Role::Semantic, v), vec![v as f32, 1.0, 0.0, 0.0]).unwrap();
    }
    for h in 0..tax.num_hoi() {
        store.insert(ManifestEntry::for_index(Role::SemanticHoi, h), vec![0.0, h as f32, 1.0, 0.0]).unwrap();
    }
    let ann = DatasetAnnotations { taxonomy: tax, images, hoi_counts: vec![] }.validated().unwrap();
    (ann, store)
}

#[test]
fn single_pair_gives_single_row() {
    let (ann, store) = world(vec![vec![(1, vec![0])]], vec![(0, 1)], vec![false]);
    let m = build_memory(&ann, &store, &config(32), &DatasetOrder).unwrap();
    assert_eq!((m.ic.rows(), m.ia.rows()), (1, 1));
    assert_eq!(m.labels(), 8);
    for r in 0..m.ic.rows() {
        let n: f32 = m.ic.key(r).iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }
}

#[test]
fn budget_keeps_first_pairs_in_dataset_order() {
    let images: Vec<_> = (0..40).map(|_| vec![(1, vec![2])]).collect();
    let (mut ann, store) = world(images, vec![(2, 1)], vec![false]);
    ann.images.reverse();
    let m = build_memory(&ann, &store, &config(16), &DatasetOrder).unwrap();
    let ids: Vec<u64> = m.ia.provenance().iter().map(|p| p.image_id).collect();
    assert_eq!(ids, (100..116).collect::<Vec<_>>());
}

#[test]
fn multi_verb_pair_is_one_row_charged_twice() {
    let (ann, store) = world(vec![vec![(1, vec![3, 7])]], vec![(3, 1), (7, 1)], vec![false, false]);
    let m = build_memory(&ann, &store, &config(4), &DatasetOrder).unwrap();
    assert_eq!(m.ic.rows(), 1);
    let hot: Vec<usize> = (0..8).filter(|&a| m.ic.value(0)[a] == 1.0).collect();
    assert_eq!(hot, vec![3, 7]);
    assert_eq!(m.contributions_per_class(2), vec![1, 1]);
}

#[test]
fn held_out_classes_stay_out_of_visual_branches() {
    let (ann, store) = world(
        vec![vec![(1, vec![0])], vec![(2, vec![1])], vec![(1, vec![0, 1])]],
        vec![(0, 1), (1, 2), (1, 1)],
        vec![false, false, true],
    );
    let m = build_memory(&ann, &store, &config(8), &DatasetOrder).unwrap();
    assert_eq!(m.ic.rows(), 3);
    // The third pair keeps only its seen verb.
    assert_eq!(m.ic.value(2)[..2], [1.0, 0.0]);
    assert_eq!(m.contributions_per_class(3), vec![2, 1, 0]);

    let only_heldout = world(vec![vec![(1, vec![1])]], vec![(0, 1), (1, 1)], vec![false, true]);
    let err = build_memory(&only_heldout.0, &only_heldout.1, &config(8), &DatasetOrder).unwrap_err();
    assert!(matches!(err, Error::Empty(_)));
}

#[test]
fn hoi_label_space_uses_per_class_rows() {
    let (ann, store) = world(vec![vec![(1, vec![0])], vec![(2, vec![1])]], vec![(0, 1), (1, 2)], vec![false, false]);
    let cfg = RunConfig { label_space: LabelSpace::Hoi, ..config(4) };
    let m = build_memory(&ann, &store, &cfg, &DatasetOrder).unwrap();
    assert_eq!(m.labels(), 2);
    assert_eq!(m.ic.value(1), &[0.0, 1.0]);
    assert_eq!(m.semantic_row(1), &normalized_f32(&[0.0, 1.0, 1.0, 0.0])[..]);
}

#[test]
fn missing_feature_names_the_pair() {
    let (ann, mut store) = world(vec![vec![(1, vec![0])]], vec![(0, 1)], vec![false]);
    let mut fresh = FeatureStore::new(4);
    for (id, v) in store.records() {
        let e = store.entry(id).unwrap().clone();
        if e.role != Role::Union {
            fresh.insert(e, v.to_vec()).unwrap();
        }
    }
    store = fresh;
    let err = build_memory(&ann, &store, &config(4), &DatasetOrder).unwrap_err();
    assert!(err.to_string().contains("image 100 pair 0"), "{err}");
}

#[test]
fn uniform_selector_is_seeded() {
    let images: Vec<_> = (0..30).map(|_| vec![(1, vec![2])]).collect();
    let (ann, store) = world(images, vec![(2, 1)], vec![false]);
    let a = build_memory(&ann, &store, &config(5), &UniformSample).unwrap();
    let b = build_memory(&ann, &store, &config(5), &UniformSample).unwrap();
    assert_eq!(encode_memory(&a), encode_memory(&b));
    assert_eq!(a.ic.rows(), 5);
    let first: Vec<u64> = a.ic.provenance().iter().map(|p| p.image_id).collect();
    assert_ne!(first, (100..105).collect::<Vec<_>>());
    assert!(selector_registry().get("uniform").is_ok());
    assert!(selector_registry().get("nope").is_err());
}

#[test]
fn branch_registry_resolves_aliases() {
    let r = branch_registry();
    assert_eq!(r.get("IC").unwrap().name(), "instance-centric");
    assert_eq!(r.get("semantic").unwrap().name(), "semantic");
}

proptest! {
    #[test]
    fn scale_invariance(seed in 0u64..1000, c in 0.01f32..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_memory(&mut rng, 6, 5, 4, Gammas { ic: 0.3, ia: 0.9, t: 1.1 });
        let (f_ic, f_ia, f_u) = (random_vec(&mut rng, 8), random_vec(&mut rng, 4), random_vec(&mut rng, 4));
        let scale = |v: &[f32]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        let a = m.score_pair(&f_ic, &f_ia, &f_u).unwrap();
        let b = m.score_pair(&scale(&f_ic), &scale(&f_ia), &scale(&f_u)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn branch_additivity(seed in 0u64..1000, g in (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_memory(&mut rng, 7, 4, 5, Gammas { ic: g.0, ia: g.1, t: g.2 });
        let (f_ic, f_ia, f_u) = (random_vec(&mut rng, 10), random_vec(&mut rng, 5), random_vec(&mut rng, 5));
        let at = |ic, ia, t| m.clone().with_gammas(Gammas { ic, ia, t }).score_pair(&f_ic, &f_ia, &f_u).unwrap();
        let full = m.score_pair(&f_ic, &f_ia, &f_u).unwrap();
        let (a, b, c) = (at(1.0, 0.0, 0.0), at(0.0, 1.0, 0.0), at(0.0, 0.0, 1.0));
        for i in 0..full.len() {
            prop_assert!((full[i] - (g.0 * a[i] + g.1 * b[i] + g.2 * c[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn suppression_is_monotone(r1 in -10.0f64..10.0, dr in 0.0f64..5.0, p1 in 0.0f64..1.0, dp in 0.0f64..1.0, lambda in 0.0f64..4.0) {
        let p2 = (p1 + dp).min(1.0);
        let lo = suppress(&[r1], p1, 1.0, lambda)[0];
        prop_assert!(suppress(&[r1 + dr], p1, 1.0, lambda)[0] >= lo);
        prop_assert!(suppress(&[r1], p2, 1.0, lambda)[0] >= lo);
        prop_assert!((0.0..=1.0).contains(&lo));
    }

    #[test]
    fn balance_bound_holds(counts in prop::collection::vec(0usize..12, 4), multi in 0usize..6, k in 1usize..6) {
        let hoi = vec![(0, 1), (1, 1), (2, 2), (3, 2)];
        let mut images = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            let (v, o) = hoi[c];
            images.extend((0..n).map(|_| vec![(o, vec![v])]));
        }
        images.extend((0..multi).map(|_| vec![(1, vec![0, 1]), (2, vec![2, 3])]));
        prop_assume!(!images.is_empty());
        let (ann, store) = world(images, hoi, vec![false; 4]);
        let m = build_memory(&ann, &store, &config(k), &DatasetOrder).unwrap();
        let per_class = m.contributions_per_class(4);
        for (c, &n) in per_class.iter().enumerate() {
            let available = counts[c] + multi;
            prop_assert_eq!(n, available.min(k));
        }
    }
}
