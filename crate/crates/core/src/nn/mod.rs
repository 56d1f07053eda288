//! Minimal n-dimensional tensor library with reverse-mode differentiation,
//! an Adam optimizer, a named-parameter checkpoint format, and a
//! finite-difference gradient checker. Scope is exactly the ops the models
//! need; no general broadcasting.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, grad_check_sampled};
pub use tape::{mlp2_forward, mlp2_params, Id, ParamStore, Real, Tape, Tensor};
