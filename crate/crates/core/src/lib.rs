//! Multi-head gated feed-forward networks computed by a blockwise fused kernel.
//!
//! The crate is `no_std` (it needs `alloc`) and has no IO. It provides:
//!
//! - a small dense [`Tensor`] with `f32` and `f64` storage,
//! - dense reference FFNs ([`reference`]) and the naive multi-head FFN ([`naive`]),
//! - the gated mixture model and its sizing rule ([`model`]),
//! - the blockwise forward and backward kernels ([`kernel`]),
//! - end-to-end analytic gradients and a finite-difference oracle ([`grad`]),
//! - an exact activation-memory ledger with closed-form peaks ([`ledger`]).
#![no_std]

extern crate alloc;

pub mod activation;
pub mod error;
pub mod grad;
pub mod heads;
pub mod init;
pub mod kernel;
pub mod ledger;
pub mod model;
pub mod naive;
pub mod reference;
pub mod tensor;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use heads::HeadLayout;
pub use kernel::TileSpec;
pub use ledger::{MemoryLedger, Method};
pub use model::{FlashDims, FlashMhfParams};
pub use tensor::{Precision, Scalar, Tensor};
