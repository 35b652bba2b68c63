//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] is rebuilt for every training step. Values are recorded in
//! topological order, so backward is a single reverse sweep.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;
