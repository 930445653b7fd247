//! From-scratch reverse-mode autodiff over dense f64 tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::{axis_split, Tensor};
