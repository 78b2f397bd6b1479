use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{toy_images, toy_memory};
use super::*;
use crate::io::{EncoderConfig, RunConfig};
use crate::kernel::{ParamSet, Real, Tape};
use crate::memory::encode_memory;

fn fixture(seed: u64) -> (RunConfig, crate::memory::ConceptMemory, Vec<TrainExample>) {
    let config = RunConfig { epochs: 2, batch_size: 1, seed, ..RunConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let memory = toy_memory(&mut rng, &config).unwrap();
    let examples = toy_images(&mut rng, &EncoderConfig::default(), &config)
        .unwrap()
        .into_iter()
        .map(|(image, pixels, targets)| TrainExample { image, pixels, targets })
        .collect();
    (config, memory, examples)
}

fn snapshot<T: Real>(p: &ParamSet<T>) -> Vec<Vec<u64>> {
    p.ids().map(|id| p.get(id).data().iter().map(|v| v.to_f64_lossy().to_bits()).collect()).collect()
}

#[test]
fn toy_loss_passes_gradient_check() {
    let r = toy_gradcheck(9, 1e-5).unwrap();
    assert!(r.coordinates > 1000, "{}", r.coordinates);
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn zero_epochs_leave_parameters_untouched() {
    let (mut config, memory, examples) = fixture(1);
    config.epochs = 0;
    let mut state = TrainState::<f32>::new(&memory, &config.encoder, 1).unwrap();
    let before = snapshot(&state.params);
    assert!(finetune(&mut state, &examples, &config).unwrap().is_empty());
    assert_eq!(snapshot(&state.params), before);
}

#[test]
fn training_is_deterministic_and_keeps_frozen_parts() {
    let (config, memory, examples) = fixture(2);
    let run = || {
        let mut s = TrainState::<f32>::new(&memory, &config.encoder, 2).unwrap();
        let h = finetune(&mut s, &examples, &config).unwrap();
        (s, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert!(ha.iter().all(|l| l.is_finite()));
    assert_eq!(snapshot(&a.params), snapshot(&b.params));

    let fresh = TrainState::<f32>::new(&memory, &config.encoder, 2).unwrap();
    for id in a.model.encoder.frozen_ids() {
        assert_eq!(a.params.get(id).data(), fresh.params.get(id).data());
    }
    let trained = a.memory().unwrap();
    assert_eq!(trained.ic.values(), memory.ic.values());
    assert_eq!(trained.ia.values(), memory.ia.values());
    assert_eq!(trained.w_t(), memory.w_t());
    assert_ne!(trained.ic.keys(), memory.ic.keys());
    for r in 0..trained.ic.rows() {
        let n: f32 = trained.ic.key(r).iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let (mut config, memory, examples) = fixture(4);
    config.batch_size = 2;
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut s = TrainState::<f32>::new(&memory, &config.encoder, 4).unwrap();
            finetune(&mut s, &examples, &config).unwrap();
            snapshot(&s.params)
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn zero_targets_without_negative_weight_do_not_move() {
    let (mut config, memory, mut examples) = fixture(5);
    for e in &mut examples {
        e.targets.iter_mut().for_each(|t| *t = 0.0);
    }
    config.focal.alpha = 1.0;
    config.optimizer.weight_decay = 0.0;
    config.normalize_keys = false;
    let mut state = TrainState::<f64>::new(&memory, &config.encoder, 5).unwrap();
    let before = snapshot(&state.params);
    let h = finetune(&mut state, &examples, &config).unwrap();
    assert!(h.iter().all(|&l| l == 0.0));
    assert_eq!(snapshot(&state.params), before);
}

#[test]
fn graph_logits_match_memory_scoring() {
    let (_, memory, examples) = fixture(6);
    let state = TrainState::<f64>::new(&memory, &EncoderConfig::default(), 6).unwrap();
    let ex = &examples[0];
    let mut tape = Tape::new();
    let (f_ic, f_ia) = state.model.pair_features(&mut tape, &state.params, &ex.image, &ex.pixels).unwrap();
    let s = state.model.logits(&mut tape, &state.params, f_ic, f_ia).unwrap();
    let m = state.memory().unwrap();
    let (ic, ia, logits) = (tape.value(f_ic), tape.value(f_ia), tape.value(s));
    for p in 0..ex.image.pairs.len() {
        let ic: Vec<f32> = ic.row(p).iter().map(|&v| v as f32).collect();
        let ia: Vec<f32> = ia.row(p).iter().map(|&v| v as f32).collect();
        let want = m.score_pair(&ic, &ia, &ia).unwrap();
        for (a, b) in logits.row(p).iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ft.acck");
    let (config, memory, examples) = fixture(7);
    let mut state = TrainState::<f32>::new(&memory, &config.encoder, 7).unwrap();
    finetune(&mut state, &examples, &config).unwrap();
    write_checkpoint(&state, 7, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..5], b"ACCK\x01");
    let back: TrainState<f32> = read_checkpoint(&path, &memory).unwrap();
    assert_eq!(snapshot(&back.params), snapshot(&state.params));
    assert_eq!(back.loss_history, state.loss_history);
    assert_eq!(encode_memory(&back.memory().unwrap()), encode_memory(&state.memory().unwrap()));

    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let err = read_checkpoint::<f32>(&path, &memory).err().unwrap();
    assert!(err.to_string().contains("truncated"), "{err}");
}

#[test]
fn empty_training_set_is_rejected() {
    let (config, memory, _) = fixture(8);
    let mut state = TrainState::<f32>::new(&memory, &config.encoder, 8).unwrap();
    assert!(matches!(finetune(&mut state, &[], &config), Err(crate::error::Error::Empty(_))));
}
