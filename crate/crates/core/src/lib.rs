//! Polarized self-attention kernels with exact gradients, static cost
//! accounting, and a toy pixel-wise regression harness.

pub mod attention;
pub mod cli;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod harness;
pub mod layers;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{ParamId, ParamStore, Tape, Var};
pub use tensor::Tensor;
