//! Each command validates its flags and inputs up front and returns the work
//! as a closure, which then runs inside a pool of `--threads` workers.

use std::path::Path;

use conceptmem::eval::{axis_registry, evaluate, run_sweep, sweep_csv, write_report, ScoredTriplet, SweepData};
use conceptmem::io::{
    load_annotations, load_taxonomy, read_feature_store, read_json, render_prompts, write_json, DatasetAnnotations,
    FeatureStore, LabelSpace, RunConfig,
};
use conceptmem::memory::{build_memory, read_memory, selector_registry, write_memory, ConceptMemory};
use conceptmem::pipeline::{infer_features, infer_images};
use conceptmem::synth::{generate, profile, write_bundle, WorldSpec};
use conceptmem::training::{
    finetune, prepare_training_set, read_checkpoint, toy_gradcheck, write_checkpoint, TrainState,
};

use crate::{
    base_config, parse_gammas, require_file, require_store, usage, BuildMemoryArgs, Cli, Command, EvalArgs, Failure,
    FinetuneArgs, GradcheckArgs, InferArgs, PromptsArgs, SweepArgs, SynthArgs, GRADCHECK_TOLERANCE,
};

type Job = Box<dyn FnOnce() -> Result<(), Failure> + Send>;

pub(crate) fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = base_config(cli.config.as_deref(), cli.seed)?;
    let job = match cli.command {
        Command::Synth(a) => synth(a, cli.seed)?,
        Command::BuildMemory(a) => build(a, cfg)?,
        Command::Infer(a) => infer(a, cfg)?,
        Command::Finetune(a) => train(a, cfg)?,
        Command::Eval(a) => eval(a)?,
        Command::Sweep(a) => sweep(a, cfg)?,
        Command::Gradcheck(a) => gradcheck(a, cfg)?,
        Command::Prompts(a) => prompts(a)?,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| usage(format!("cannot start {} worker threads: {e}", cli.threads)))?;
    pool.install(job)
}

fn finish(cfg: RunConfig) -> Result<RunConfig, Failure> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn set_space(cfg: &mut RunConfig, space: Option<crate::SpaceArg>) {
    if let Some(s) = space {
        cfg.label_space = s.into();
    }
}

fn set_lambda(cfg: &mut RunConfig, lambda: Option<f64>) -> Result<(), Failure> {
    if let Some(l) = lambda {
        if !l.is_finite() || l < 0.0 {
            return Err(usage(format!("--lambda must be a non-negative number, got {l}")));
        }
        cfg.lambda_infer = l;
    }
    Ok(())
}

fn set_shots(cfg: &mut RunConfig, shots: Option<usize>) -> Result<(), Failure> {
    if let Some(k) = shots {
        if k == 0 {
            return Err(usage("--shots must be at least 1"));
        }
        cfg.memory_shots = k;
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(conceptmem::Error::Io { path: dir.to_path_buf(), source: e }))?;
    }
    Ok(())
}

/// Memory matrices from `path` with the scoring settings of `cfg`.
fn load_memory(path: &Path, cfg: &RunConfig, ann: &DatasetAnnotations) -> Result<ConceptMemory, Failure> {
    let memory = ConceptMemory::from_parts(read_memory(path)?, cfg)?;
    let width = match cfg.label_space {
        LabelSpace::Verb => ann.taxonomy.num_verbs(),
        LabelSpace::Hoi => ann.taxonomy.num_hoi(),
    };
    if memory.labels() != width {
        return Err(conceptmem::Error::Config(format!(
            "memory has {} label columns but the {:?} label space of this taxonomy has {width}",
            memory.labels(),
            cfg.label_space
        ))
        .into());
    }
    Ok(memory)
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<Job, Failure> {
    let mut spec = match &a.spec {
        Some(p) => {
            require_file(p, "world spec")?;
            WorldSpec::load(p).map_err(|e| usage(e.to_string()))?
        }
        None => profile(&a.profile, seed.unwrap_or(0)).map_err(|e| usage(e.to_string()))?,
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(h) = a.heldout {
        spec.heldout_fraction = h;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(Box::new(move || {
        let bundle = generate(&spec)?;
        write_bundle(&bundle, &a.out)?;
        println!(
            "wrote {} train and {} test images ({} HOI classes) to {}",
            bundle.train.images.len(),
            bundle.test.images.len(),
            bundle.train.taxonomy.num_hoi(),
            a.out.display()
        );
        Ok(())
    }))
}

fn build(a: BuildMemoryArgs, mut cfg: RunConfig) -> Result<Job, Failure> {
    require_file(&a.annotations, "annotations")?;
    require_store(&a.features, "features")?;
    set_shots(&mut cfg, a.shots)?;
    set_space(&mut cfg, a.label_space);
    if let Some(s) = a.selector {
        cfg.shot_selector = s;
    }
    if !selector_registry().contains(&cfg.shot_selector) {
        return Err(usage(selector_registry().get(&cfg.shot_selector).err().unwrap().to_string()));
    }
    let cfg = finish(cfg)?;
    Ok(Box::new(move || {
        let ann = load_annotations(&a.annotations)?;
        let features = read_feature_store(&a.features)?;
        let selectors = selector_registry();
        let memory = build_memory(&ann, &features, &cfg, selectors.get(&cfg.shot_selector)?)?;
        ensure_parent(&a.out)?;
        write_memory(&memory, &a.out)?;
        println!(
            "memory: {} rows, {} label columns, K = {} -> {}",
            memory.ic.rows(),
            memory.labels(),
            cfg.memory_shots,
            a.out.display()
        );
        Ok(())
    }))
}

fn infer(a: InferArgs, mut cfg: RunConfig) -> Result<Job, Failure> {
    require_file(&a.annotations, "annotations")?;
    require_store(&a.features, "features")?;
    require_file(&a.memory, "memory")?;
    if let (Some(ck), Some(im)) = (&a.checkpoint, &a.images) {
        require_file(ck, "checkpoint")?;
        require_file(&conceptmem::io::manifest_path(ck), "checkpoint manifest")?;
        require_store(im, "images")?;
    }
    set_lambda(&mut cfg, a.lambda)?;
    set_space(&mut cfg, a.label_space);
    if let Some(g) = &a.gammas {
        cfg.gammas = parse_gammas(g)?;
    }
    let cfg = finish(cfg)?;
    Ok(Box::new(move || {
        let ann = load_annotations(&a.annotations)?;
        let features = read_feature_store(&a.features)?;
        let memory = load_memory(&a.memory, &cfg, &ann)?;
        let triplets = match (&a.checkpoint, &a.images) {
            (Some(ck), Some(im)) => {
                let state = read_checkpoint::<f32>(ck, &memory)?;
                let images = read_feature_store(im)?;
                infer_images(&ann, &images, &features, &state, &cfg)?
            }
            _ => infer_features(&ann, &features, &memory, &cfg)?,
        };
        ensure_parent(&a.out)?;
        write_json(&a.out, &triplets)?;
        println!("{} triplets over {} images -> {}", triplets.len(), ann.images.len(), a.out.display());
        Ok(())
    }))
}

fn train(a: FinetuneArgs, mut cfg: RunConfig) -> Result<Job, Failure> {
    require_file(&a.annotations, "annotations")?;
    require_store(&a.features, "features")?;
    require_store(&a.images, "images")?;
    require_file(&a.memory, "memory")?;
    if let Some(e) = a.epochs {
        if e == 0 {
            return Err(usage("--epochs must be at least 1"));
        }
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(usage(format!("--lr must be positive, got {lr}")));
        }
        cfg.optimizer.lr = lr;
    }
    set_space(&mut cfg, a.label_space);
    let cfg = finish(cfg)?;
    Ok(Box::new(move || {
        let ann = load_annotations(&a.annotations)?;
        let features = read_feature_store(&a.features)?;
        let images = read_feature_store(&a.images)?;
        let memory = load_memory(&a.memory, &cfg, &ann)?;
        let mut state = TrainState::<f32>::new(&memory, &cfg.encoder, cfg.seed)?;
        let examples = prepare_training_set(&ann, &images, &features, &cfg)?;
        let losses = finetune(&mut state, &examples, &cfg)?;
        ensure_parent(&a.out)?;
        write_checkpoint(&state, cfg.seed, &a.out)?;
        println!(
            "{} epochs on {} images: mean focal loss {:.6} -> {:.6}; checkpoint {}",
            losses.len(),
            examples.len(),
            losses[0],
            losses[losses.len() - 1],
            a.out.display()
        );
        Ok(())
    }))
}

fn eval(a: EvalArgs) -> Result<Job, Failure> {
    require_file(&a.annotations, "annotations")?;
    require_file(&a.predictions, "predictions")?;
    Ok(Box::new(move || {
        let ann = load_annotations(&a.annotations)?;
        let triplets: Vec<ScoredTriplet> = read_json(&a.predictions)?;
        let report = evaluate(&triplets, &ann, &ann.taxonomy);
        ensure_parent(&a.out)?;
        write_report(&report, &a.out)?;
        println!("{}", report.summary());
        Ok(())
    }))
}

struct SweepSplit {
    train: DatasetAnnotations,
    train_features: FeatureStore,
    test: DatasetAnnotations,
    test_features: FeatureStore,
}

fn sweep(a: SweepArgs, mut cfg: RunConfig) -> Result<Job, Failure> {
    let axes = axis_registry();
    let axis_name = axes.get(&a.axis).map_err(|e| usage(e.to_string()))?.name();
    set_shots(&mut cfg, a.shots)?;
    set_lambda(&mut cfg, a.lambda)?;
    set_space(&mut cfg, a.label_space);
    if let Some(g) = &a.gammas {
        cfg.gammas = parse_gammas(g)?;
    }
    let cfg = finish(cfg)?;
    for v in &a.values {
        let mut probe = cfg.clone();
        axes.get(axis_name)?.apply(&mut probe, v).map_err(|e| usage(e.to_string()))?;
        finish(probe)?;
    }
    let specs = match (&a.profile, &a.train_annotations) {
        (Some(name), _) => {
            if a.seeds == 0 {
                return Err(usage("--seeds must be at least 1"));
            }
            let specs = (0..a.seeds)
                .map(|i| profile(name, cfg.seed + i))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| usage(e.to_string()))?;
            Some(specs)
        }
        (None, Some(train)) => {
            require_file(train, "train annotations")?;
            require_store(a.train_features.as_ref().expect("clap requires it"), "train features")?;
            require_file(a.annotations.as_ref().expect("clap requires it"), "annotations")?;
            require_store(a.features.as_ref().expect("clap requires it"), "features")?;
            None
        }
        (None, None) => {
            return Err(usage("sweep needs --profile or --train-annotations/--train-features/--annotations/--features"))
        }
    };
    Ok(Box::new(move || {
        let splits = match specs {
            Some(specs) => specs
                .iter()
                .map(|s| {
                    let b = generate(s)?;
                    Ok(SweepSplit {
                        train: b.train,
                        train_features: b.train_features,
                        test: b.test,
                        test_features: b.test_features,
                    })
                })
                .collect::<Result<Vec<_>, conceptmem::Error>>()?,
            None => vec![SweepSplit {
                train: load_annotations(a.train_annotations.as_ref().unwrap())?,
                train_features: read_feature_store(a.train_features.as_ref().unwrap())?,
                test: load_annotations(a.annotations.as_ref().unwrap())?,
                test_features: read_feature_store(a.features.as_ref().unwrap())?,
            }],
        };
        let data: Vec<SweepData> = splits
            .iter()
            .map(|s| SweepData {
                train: &s.train,
                train_features: &s.train_features,
                test: &s.test,
                test_features: &s.test_features,
            })
            .collect();
        let rows = run_sweep(axis_registry().get(axis_name)?, &a.values, &cfg, &data)?;
        let csv = sweep_csv(&rows);
        ensure_parent(&a.out)?;
        std::fs::write(&a.out, &csv).map_err(|e| conceptmem::Error::Io { path: a.out.clone(), source: e })?;
        print!("{csv}");
        Ok(())
    }))
}

fn gradcheck(a: GradcheckArgs, cfg: RunConfig) -> Result<Job, Failure> {
    if a.profile != "toy" {
        return Err(usage(format!("unknown gradcheck profile `{}` (available: toy)", a.profile)));
    }
    if !a.eps.is_finite() || a.eps <= 0.0 {
        return Err(usage(format!("--eps must be positive, got {}", a.eps)));
    }
    Ok(Box::new(move || {
        let r = toy_gradcheck(cfg.seed, a.eps)?;
        println!(
            "max relative error {:.3e} at {}[{}] over {} coordinates",
            r.max_rel_error, r.worst_param, r.worst_index, r.coordinates
        );
        if r.max_rel_error <= GRADCHECK_TOLERANCE {
            Ok(())
        } else {
            Err(Failure::Rejected(format!(
                "gradient check failed: {:.3e} exceeds {GRADCHECK_TOLERANCE:e}",
                r.max_rel_error
            )))
        }
    }))
}

fn prompts(a: PromptsArgs) -> Result<Job, Failure> {
    require_file(&a.taxonomy, "taxonomy")?;
    Ok(Box::new(move || {
        let tax = load_taxonomy(&a.taxonomy)?;
        for p in render_prompts(&tax) {
            println!("{p}");
        }
        Ok(())
    }))
}
