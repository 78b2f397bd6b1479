//! Vocabularies, annotation documents, run configuration, prompt rendering
//! and the binary feature container.

mod annotations;
mod config;
mod feature_store;
mod prompts;
mod taxonomy;

pub use annotations::{load_annotations, save_annotations, DatasetAnnotations, GtPair, ImageRecord};
pub use config::{DetectorConfig, EncoderConfig, FocalConfig, Gammas, LabelSpace, OptimizerConfig, RunConfig};
pub use feature_store::{
    check_pair_records, manifest_path, read_feature_store, record_id_for_box, record_id_for_index, record_id_for_name,
    write_feature_store, FeatureStore, ManifestEntry, Role, ACFB_MAGIC, ACFB_VERSION,
};
pub use prompts::{render_prompt, render_prompts, PROMPT_TEMPLATE};
pub use taxonomy::{load_taxonomy, Taxonomy, RARE_THRESHOLD};

use std::path::Path;

use crate::error::{Error, Result};

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse { what: path.display().to_string(), source })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| Error::Parse { what: path.display().to_string(), source })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
