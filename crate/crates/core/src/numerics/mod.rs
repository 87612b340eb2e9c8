//! Dense f64 matrix computation with reverse-mode gradients.
//!
//! Everything trainable in this crate flows through [`Tape`], an explicit
//! operation tape scoped to one forward pass. All arithmetic is 64-bit:
//! the gradient checks in [`gradcheck`] run at tolerances (1e-6 and tighter)
//! that 32-bit floats cannot reach.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, grad_check_fn, DEFAULT_EPS};
pub use matrix::Matrix;
pub use tape::{apply_primitive, Gradients, PrimitiveKind, Tape, Var};
