//! Discriminant-information channel pruning toolkit.
//!
//! Scores the channels of a trained network by how much class-discriminant
//! information their feature maps carry, prunes under uniform ratios or a
//! FLOPs budget, transfers pruned structures across depths, and applies
//! bi-level mixed-precision weight quantization.

pub mod di;
pub mod distill;
pub mod error;
pub mod heuristics;
pub mod linalg;
pub mod netgraph;
pub mod pruner;
pub mod quantizer;
pub mod resource;
pub mod tensor_io;
pub mod trainer;

pub use error::{Error, Result};
