//! Benchmark pipeline for explanations of defended graph neural networks.

pub mod defense;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod seed;

pub use error::{Error, Result};
