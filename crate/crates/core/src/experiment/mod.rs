//! Experiment grids: dataset × architecture × defense, explained and scored.
//!
//! Seeds form a tree rooted at the master seed:
//!
//! ```text
//! master ─ iteration i ─┬─ split, targets
//!                       ├─ model(arch)            weights and training noise
//!                       └─ node(v) ─ run(r) ─┬─ explain
//!                                            └─ perturb
//! ```
//!
//! Node and run seeds do not depend on the defense, so every cell of an
//! iteration explains the same nodes with the same random draws.

mod config;
mod report;
mod runner;

pub use config::{
    DatasetRef, ExperimentConfig, ExplainerId, MetricOptions, PerturbationOptions, ATTACKS, SUBGRAPHX_NODE_LIMIT,
};
pub use report::{grid_reports, render_chart, summary_csv, write_summary, GridReport};
pub use runner::{read_results, CellKey, CellResult, CellSeeds, Experiment, IterationPlan, OutputLayout, Protocol};

use crate::seed;

pub fn iteration_seed(master: u64, iteration: usize) -> u64 {
    seed::derive(seed::derive_str(master, "iteration"), iteration as u64)
}

pub fn model_seed(iteration_seed: u64, arch_id: &str) -> u64 {
    seed::derive_str(seed::derive_str(iteration_seed, "model"), arch_id)
}

pub fn run_seed(iteration_seed: u64, node: usize, run: usize) -> u64 {
    let node_seed = seed::derive(seed::derive_str(iteration_seed, "node"), node as u64);
    seed::derive(node_seed, run as u64)
}

pub fn explain_seed(run_seed: u64) -> u64 {
    seed::derive_str(run_seed, "explain")
}

pub fn perturbation_seed(run_seed: u64) -> u64 {
    seed::derive_str(run_seed, "perturb")
}
