//! One-axis ablation sweeps: rebuild memory per setting, infer training-free,
//! report mAP averaged over datasets (e.g. synthetic seeds).

use std::fmt::Write as _;

use super::evaluate;
use crate::error::{Error, Result};
use crate::io::{DatasetAnnotations, FeatureStore, Gammas, RunConfig};
use crate::memory::{build_memory, selector_registry};
use crate::pipeline::infer_features;
use crate::registry::Registry;

/// A configuration knob a sweep can vary.
pub trait SweepAxis: Send + Sync {
    fn name(&self) -> &'static str;
    /// Writes `value` into `config`; rejects malformed values.
    fn apply(&self, config: &mut RunConfig, value: &str) -> Result<()>;
}

pub struct Shots;
pub struct GammaWeights;
pub struct Lambda;

impl SweepAxis for Shots {
    fn name(&self) -> &'static str {
        "shots"
    }

    fn apply(&self, config: &mut RunConfig, value: &str) -> Result<()> {
        match value.trim().parse::<usize>() {
            Ok(k) if k > 0 => {
                config.memory_shots = k;
                Ok(())
            }
            _ => Err(Error::Config(format!("shots must be a positive integer, got `{value}`"))),
        }
    }
}

impl SweepAxis for GammaWeights {
    fn name(&self) -> &'static str {
        "gammas"
    }

    fn apply(&self, config: &mut RunConfig, value: &str) -> Result<()> {
        config.gammas = Gammas::parse(value)?;
        Ok(())
    }
}

impl SweepAxis for Lambda {
    fn name(&self) -> &'static str {
        "lambda"
    }

    fn apply(&self, config: &mut RunConfig, value: &str) -> Result<()> {
        match value.trim().parse::<f64>() {
            Ok(l) if l.is_finite() && l >= 0.0 => {
                config.lambda_infer = l;
                Ok(())
            }
            _ => Err(Error::Config(format!("lambda must be a non-negative number, got `{value}`"))),
        }
    }
}

pub fn axis_registry() -> Registry<dyn SweepAxis> {
    Registry::<dyn SweepAxis>::new("sweep axis")
        .with("shots", Box::new(Shots))
        .with("gammas", Box::new(GammaWeights))
        .with("lambda", Box::new(Lambda))
}

/// Memory source and evaluation split of one sweep replicate.
pub struct SweepData<'a> {
    pub train: &'a DatasetAnnotations,
    pub train_features: &'a FeatureStore,
    pub test: &'a DatasetAnnotations,
    pub test_features: &'a FeatureStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub setting: String,
    pub map_full: Option<f64>,
    pub map_rare: Option<f64>,
    pub map_nonrare: Option<f64>,
}

/// Mean of the defined entries; `None` when none is defined.
fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// One row per value, in the given order. Every value is validated before
/// any memory is built.
pub fn run_sweep(
    axis: &dyn SweepAxis,
    values: &[String],
    base: &RunConfig,
    data: &[SweepData],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || data.is_empty() {
        return Err(Error::Empty("sweep needs at least one value and one dataset".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, v)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let selectors = selector_registry();
    let mut rows = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let selector = selectors.get(&cfg.shot_selector)?;
        let mut reports = Vec::with_capacity(data.len());
        for d in data {
            let memory = build_memory(d.train, d.train_features, cfg, selector)?;
            let triplets = infer_features(d.test, d.test_features, &memory, cfg)?;
            reports.push(evaluate(&triplets, d.test, &d.test.taxonomy));
        }
        let row = SweepRow {
            setting: value.trim().to_string(),
            map_full: mean_defined(reports.iter().map(|r| r.map_full)),
            map_rare: mean_defined(reports.iter().map(|r| r.map_rare)),
            map_nonrare: mean_defined(reports.iter().map(|r| r.map_nonrare)),
        };
        log::info!("{} = {}: mAP_full {:?}", axis.name(), row.setting, row.map_full);
        rows.push(row);
    }
    Ok(rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `setting,mAP_full,mAP_rare,mAP_nonrare`; undefined means are empty cells.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("setting,mAP_full,mAP_rare,mAP_nonrare\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&r.setting),
            cell(r.map_full),
            cell(r.map_rare),
            cell(r.map_nonrare)
        );
    }
    out
}
