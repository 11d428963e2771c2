//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! Every value is 64-bit. Operations are recorded eagerly on a [`Tape`];
//! [`Tape::backward`] walks the tape in reverse and accumulates gradients
//! for every node that requires one.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use tape::{ConvMode, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
