//! Collaborative data-quality control for distributed fine-tuning.
//!
//! Clients score each private training sample by tracing its influence on a
//! public validation set across saved optimizer checkpoints. A server turns
//! the scores of a handful of trusted anchor samples into one global
//! threshold, clients drop everything below it, retrain low-rank adapters on
//! what is left, and the server merges the adapters.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithm of the
//! workflow. File formats, parallel execution and the command line live in
//! the companion `clues` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod datagen;
pub mod error;
pub mod eval;
pub mod exec;
pub mod federation;
pub mod linalg;
pub mod merging;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod scoring;
pub mod selection;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, DenseVector};
pub use model::{
    Architecture, LoraAdapter, LoraLayer, LossKind, ModelParams, QualityLabel, Sample, Target, TrainableModel,
};
