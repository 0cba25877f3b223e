//! Masked-attention discrete-time survival model, its losses, metrics,
//! baselines and attribution. Everything here is `no_std` with `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attribution;
pub mod baselines;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod imputation;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod tape;
pub mod tensor;
pub mod train;

pub use encoder::{EncoderModel, SurvivalModelConfig};
pub use error::{Error, Result};
pub use nn::{HazardModel, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
