//! Minimal tensor engine with reverse- and forward-mode differentiation.

mod adam;
pub mod check;
pub(crate) mod kernels;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{halving_lr, Adam};
pub use layers::{Conv2d, Ctx, Dense, GroupNorm};
pub use params::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
