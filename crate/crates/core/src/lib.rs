//! Actor-level steganalysis that survives cover-source mismatch.
//!
//! Every actor owns a batch of same-source images. For each candidate
//! stegosystem a pair of image classifiers is trained: a primary one
//! (cover vs. stego) and a secondary one (stego vs. double stego). Running
//! both on an actor's images and on a freshly re-embedded copy of them
//! exposes inconsistent answers, whose count yields an estimate of how well
//! the primary classifier works on that actor's source. Ratios and accuracy
//! estimates for all stegosystems feed a final boosted classifier that
//! either names the actor innocent/guilty or rejects it as mismatched.
//!
//! Module map:
//!
//! - [`imagery`]: 8-bit grayscale images, PGM I/O, synthetic cover sources.
//! - [`stego`]: ±1 embedders and the payload-limited sender.
//! - [`features`]: residual co-occurrence features and the directionality audit.
//! - [`learner`]: gradient-boosted decision stumps.
//! - [`dci`]: the four-way consistency check and the accuracy estimate.
//! - [`actors`]: actor simulation and per-actor feature construction.
//! - [`verdict`]: final actor classification and evaluation.
//! - [`experiment`]: configuration and the end-to-end harness used by the CLI.

pub mod actors;
pub mod dci;
mod error;
pub mod experiment;
pub mod features;
pub mod imagery;
pub mod learner;
pub mod seed;
pub mod stego;
pub mod store;
pub mod verdict;
pub mod workflow;

pub use error::{Error, Result};
