//! Concept-memory scoring of human-object interactions.
//!
//! A two-stage pipeline: detections are paired, each pair is described by
//! instance-centric (human + object crop) and interaction-aware (union crop)
//! features, and a three-branch key-value memory turns those features into
//! per-action logits that are modulated by detector confidence. The memory
//! works training-free; optionally its keys and a set of residual
//! cross-attention adapters inside a patch-transformer encoder can be
//! fine-tuned with focal loss.

pub mod bbox;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod memory;
pub mod pairing;
pub mod pipeline;
pub mod registry;
pub mod synth;
pub mod training;

pub use bbox::BBox;
pub use error::{Error, Result};
