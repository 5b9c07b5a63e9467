//! Core of the FitNets toolkit: training thin, deep student networks from a
//! wide, shallow teacher using softened-output distillation and intermediate
//! hints.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. Everything that
//! touches files, the command line or wall-clock time lives in the `fitnets`
//! companion crate.
//!
//! Layout:
//! * [`tensor`] and [`ops`]: a dense tensor type and forward/backward rules for
//!   every layer kind the architectures use, plus [`gradcheck`] to verify them
//!   against central finite differences.
//! * [`netarch`]: architecture descriptions, shape inference, parameter and
//!   multiplication counting, and builders for the published networks.
//! * [`distill`]: softened softmax, the distillation loss, the hint loss and
//!   convolutional regressors.
//! * [`train`]: parameter sets, optimizers, early stopping and the two-stage
//!   hint-then-distill pipeline.
//! * [`data`]: in-memory datasets, synthetic data and preprocessing.

#![no_std]

extern crate alloc;

pub mod data;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod netarch;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
