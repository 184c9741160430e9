//! Fine-tuning a conditional rectified-flow shape generator against binary
//! stability feedback from a deterministic rigid-body statics simulator.

pub mod align;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod flow;
pub mod geometry;
pub mod physics;
pub mod rng;
pub mod seed;
pub mod tensor;
pub mod textio;

pub use error::{Error, Result};
