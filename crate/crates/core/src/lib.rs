//! Invertible autoencoder (InvAuto) building blocks.
//!
//! The crate is `no_std` + `alloc`. It contains a small dense tensor type
//! with tape-based reverse-mode differentiation, the invertible layer zoo
//! (tied linear/conv layers, the bijective leaky activation, residual blocks
//! and bias layers), the baseline autoencoders, linearization diagnostics,
//! Adam, and the reconstruction and adversarial training loops.
//!
//! File formats, dataset loaders and the command line live in the `invauto`
//! companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod layers;
pub mod linearize;
pub mod losses;
pub mod models;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod translator;

pub use error::{Error, Result};
pub use param::{ParamId, ParamStore};
pub use scalar::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
