//! File formats, a thread-pool executor and the command line for the
//! `clues-core` workflow.

pub mod bundle;
pub mod ckpt;
pub mod cli;
pub mod config;
pub mod exec;
pub mod report;

pub use clues_core as core;
