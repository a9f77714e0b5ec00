//! Certification math for generalized randomized smoothing over semantic
//! image transformations.
//!
//! The crate is `no_std` (with `alloc`). Everything here is pure computation:
//! a small reverse/forward-mode tensor engine, ground-truth transformation
//! kernels, smoothing distributions and their radius machinery, the
//! surrogate transformation network, Jacobian-residual estimation, the
//! certification pipeline and an EoT-PGD attack. File formats, the CLI and
//! parallel drivers live in the `gsmooth` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod certify;
pub mod classifier;
pub mod data;
pub mod error;
pub mod image;
pub mod jacobian;
pub mod linalg;
pub mod nn;
pub mod quadrature;
pub mod rng;
pub mod smoothing;
pub mod special;
pub mod surrogate;
pub mod transforms;

pub use error::{Error, Result};
pub use image::Image;
pub use nn::{ParamStore, Tape, Tensor, Var};
