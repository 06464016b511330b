//! Minimal reverse-mode automatic differentiation over dense arrays.

mod adamw;
mod gradcheck;
mod real;
mod tape;
mod tensor;

pub use adamw::{AdamState, AdamW};
pub use gradcheck::{grad_check, GradCheckReport};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
