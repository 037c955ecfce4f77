//! Core numerics for DUET-style structured representations.
//!
//! A representation `z ∈ R^D` is read as a `C × G` matrix whose column sums,
//! after a softmax, form a distribution over the normalized parameter of an
//! input transformation, and whose row sums form a transformation-invariant
//! content vector. This crate contains everything needed to train and
//! analyze such representations without any I/O:
//!
//! - [`tensor`], [`graph`], [`nn`], [`optim`], [`gradcheck`]: a small dense
//!   reverse-mode core with an MLP encoder ending in batch normalization.
//! - [`transforms`]: parameterized image transformations and two-view sampling.
//! - [`targets`]: discretized Gaussian / von Mises targets and the
//!   Jensen-Shannon divergence.
//! - [`duet`], [`model`], [`decoder`], [`probe`]: losses, training loop,
//!   detached decoder and linear probe.
//! - [`equivariance`]: the representation-space transform `T_g`, parameter
//!   recovery and diagnostics.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dataset;
pub mod decoder;
pub mod duet;
pub mod equivariance;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod targets;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::Tensor;
