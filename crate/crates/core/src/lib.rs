//! Quantization-aware training of fixed-point networks with per-parameter
//! learnable bit-widths.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! core:
//!
//! - [`fxp`]: fixed-point formats and the differentiable quantizer,
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` arrays,
//! - [`qlayers`]: quantized dense layers and the model container,
//! - [`resource`]: EBOPs (effective bit operations), calibration, CSD and the
//!   regularized loss,
//! - [`trainer`]: Adam, cosine restarts, beta scheduling and Pareto tracking,
//! - [`compile`]: lowering to an exact integer shift-add graph, its
//!   interpreter and a textual IR.
//!
//! File formats, datasets and the command line live in the `fxq` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod compile;
mod error;
pub mod fxp;
pub mod qlayers;
pub mod resource;
pub mod trainer;

pub use error::{Error, Result};
