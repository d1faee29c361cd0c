//! Desk-scale adversarial training laboratory.
//!
//! Everything runs on two small architectures (an MLP and a two-block
//! convnet) with a hand-rolled reverse-mode gradient core, so the whole
//! min-max pipeline stays inspectable: losses on raw logits, L-infinity
//! attacks, cyclic and piecewise learning rates, per-epoch robustness
//! tracking, and a two-split bias-variance decomposition.
//!
//! Determinism is a design constraint throughout: every random draw comes
//! from a stream derived from (seed, purpose salts), so identical configs
//! reproduce identical runs bit for bit.

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
