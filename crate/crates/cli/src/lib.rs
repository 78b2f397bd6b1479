//! `conceptmem` command line: synthetic worlds, memory construction,
//! training-free and fine-tuned inference, evaluation and ablation sweeps.
//!
//! Exit codes: 0 success, 1 invalid invocation (unknown flag, missing input,
//! bad value; all checked before any work), 2 failure while running.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use conceptmem::io::{Gammas, LabelSpace, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Largest max relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "conceptmem", version, about = "Concept-memory human-object interaction detection")]
pub struct Cli {
    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration overriding the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world into a directory.
    Synth(SynthArgs),
    /// Cache K-shot ground-truth pairs into a memory file.
    BuildMemory(BuildMemoryArgs),
    /// Score every candidate pair and write ranked triplets.
    Infer(InferArgs),
    /// Fine-tune adapters and memory keys from pixels.
    Finetune(FinetuneArgs),
    /// Compute per-class AP and mAP of a prediction file.
    Eval(EvalArgs),
    /// Vary one setting and report mAP per value.
    Sweep(SweepArgs),
    /// Finite-difference check of the full training loss.
    Gradcheck(GradcheckArgs),
    /// Print the text prompt of every verb.
    Prompts(PromptsArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SpaceArg {
    Verb,
    Hoi,
}

impl From<SpaceArg> for LabelSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Verb => LabelSpace::Verb,
            SpaceArg::Hoi => LabelSpace::Hoi,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "easy")]
    pub profile: String,
    /// World spec JSON used instead of the profile.
    #[arg(long, conflicts_with = "profile")]
    pub spec: Option<PathBuf>,
    /// Fraction of HOI classes held out of memory.
    #[arg(long)]
    pub heldout: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildMemoryArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub selector: Option<String>,
    #[arg(long, value_enum)]
    pub label_space: Option<SpaceArg>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Crop features; on the pixel path only the object-text records are used.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub memory: PathBuf,
    /// Fine-tuned checkpoint; switches to the pixel path.
    #[arg(long, requires = "images")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gammas: Option<String>,
    #[arg(long, value_enum)]
    pub label_space: Option<SpaceArg>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub memory: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub label_space: Option<SpaceArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub axis: String,
    #[arg(long, num_args = 1.., required = true)]
    pub values: Vec<String>,
    /// Synthetic preset generated once per seed; replaces the file inputs.
    #[arg(long, conflicts_with_all = ["train_annotations", "train_features", "annotations", "features"])]
    pub profile: Option<String>,
    /// Number of consecutive seeds averaged with `--profile`.
    #[arg(long, default_value_t = 1, requires = "profile")]
    pub seeds: u64,
    #[arg(long, requires_all = ["train_features", "annotations", "features"])]
    pub train_annotations: Option<PathBuf>,
    #[arg(long)]
    pub train_features: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub gammas: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub label_space: Option<SpaceArg>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "toy")]
    pub profile: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct PromptsArgs {
    #[arg(long)]
    pub taxonomy: PathBuf,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    /// Rejected before any work started.
    Usage(String),
    Runtime(conceptmem::Error),
    /// Finished, but the result fails its acceptance threshold.
    Rejected(String),
}

impl From<conceptmem::Error> for Failure {
    fn from(e: conceptmem::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

/// A feature container and its JSON manifest must both exist.
pub(crate) fn require_store(path: &Path, what: &str) -> Result<(), Failure> {
    require_file(path, what)?;
    require_file(&conceptmem::io::manifest_path(path), &format!("{what} manifest"))
}

/// Defaults, then `--config`, then `--seed`.
pub(crate) fn base_config(cli_config: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = match cli_config {
        Some(p) => {
            require_file(p, "config")?;
            RunConfig::load(p).map_err(|e| usage(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub(crate) fn parse_gammas(s: &str) -> Result<Gammas, Failure> {
    Gammas::parse(s).map_err(|e| usage(e.to_string()))
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Rejected(msg)) => {
            eprintln!("{msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
