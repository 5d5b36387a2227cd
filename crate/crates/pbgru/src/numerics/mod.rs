//! Dense `f64` tensors with reverse-mode gradient accumulation, plus the
//! training plumbing built on top of them: a seeded RNG, the Adam optimizer,
//! named parameter sets, checkpoint IO, and a finite-difference gradient
//! checker.

mod adam;
mod checkpoint;
mod gradcheck;
mod params;
mod rng;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use gradcheck::{grad_check, grad_check_with_fault, GradCheckEntry, GradCheckReport};
pub use params::ParamSet;
pub use rng::Rng;
pub use tensor::{stack_channels, Tensor};
