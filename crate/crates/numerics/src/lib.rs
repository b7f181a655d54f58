//! Numerical substrate for the dialogue model: dense row-major tensors, a
//! reverse-mode autodiff tape, the Adam optimizer and a central-difference
//! gradient checker.
//!
//! Everything is generic over [`Real`] so the same model code runs in `f32`
//! for training and in `f64` for gradient checking.

mod error;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
mod real;
pub mod tape;
mod tensor;

pub use error::{NumericsError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use real::Real;
pub use tape::{Gradients, Mode, Tape, Var};
pub use tensor::Tensor;
