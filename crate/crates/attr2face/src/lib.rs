//! Std companion to `attr2face-core`: dataset layout and image IO, the
//! sample cache, checkpoint bundles, the training driver, inference,
//! evaluation reports and the HTTP synthesis service.

pub mod cache;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod service;
pub mod synth;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
