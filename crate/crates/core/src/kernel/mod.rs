//! Dense row-major tensors with a recorded tape for reverse-mode gradients,
//! an AdamW optimizer and a central-difference gradient checker.
//!
//! Every tensor is viewed as a matrix whose columns are the last axis; the
//! pipeline only ever needs token-by-channel layouts.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub(crate) use tape::focal_term;


pub use gradcheck::{finite_diff_check, GradCheckReport, GRAD_FLOOR};
pub use params::{adamw_step, ParamId, ParamSet};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
