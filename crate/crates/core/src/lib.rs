//! Workbench for concurrent-action imitation learning.
//!
//! The crate trains a factored-Bernoulli multi-action policy with batched
//! advantage actor-critic plus an expert cross-entropy term, and compares it
//! with single-action and TD-only baselines on a small zone-capture arena.

pub mod arena;
pub mod error;
pub mod expert_data;
pub mod numerics;
pub mod policy;
pub mod trainer;

pub use error::{Error, Result};
