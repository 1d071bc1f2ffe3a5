//! Two-stage attribute-conditioned face synthesis: attributes → sketch →
//! face, with multi-scale generators, patch discriminators and the
//! supporting data, training and evaluation code.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod attributes;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod face;
mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod predictor;
pub mod sketch;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
