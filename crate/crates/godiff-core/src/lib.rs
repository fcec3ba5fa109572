//! Pseudo-domain data augmentation for single-domain generalization.
//!
//! The pipeline expands one annotated source dataset into stylistically
//! diverse pseudo-domain datasets while preserving annotations:
//!
//! 1. [`prompt`] builds scene-level prompts from extracted tags plus domain
//!    descriptors, and per-object prompts from randomized templates.
//! 2. [`ptdg`] runs a pluggable generator (reference: a procedural stylizer)
//!    that re-renders each image in a target style, transferring boxes and
//!    labels verbatim.
//! 3. [`filter`] drops generated objects whose region embeddings drift too
//!    far from the source, measured with an RBF kernel.
//! 4. [`csn`] mixes per-channel feature statistics across styles inside a
//!    toy backbone and scores style alignment with a covariance matching
//!    loss (with analytic gradients, verified by finite differences).
//! 5. [`eval`] computes IoU / AP / mAP / mPC detection metrics and an MMD²
//!    two-sample statistic between embedding sets.
//!
//! Everything is deterministic: randomness flows from explicit seeds through
//! counter-based generators ([`rng`]), parallel execution ([`parallel`])
//! yields byte-identical outputs to serial runs, and dataset files are
//! written in a canonical form ([`dataset`]).

pub mod config;
pub mod csn;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod filter;
pub mod parallel;
pub mod pipeline;
pub mod prompt;
pub mod ptdg;
pub mod rng;

pub use error::{Error, Result};
