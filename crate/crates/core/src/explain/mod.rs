//! Post-hoc explanations of single-node predictions.
//!
//! Explainers see the model only through [`NodeModel`], so tests can plug in
//! hand-built models with known behavior.

mod gnnexplainer;
mod maskio;
mod shapley;
mod subgraphx;

use std::rc::Rc;

use gnnbench_autodiff::{Matrix, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::Graph;
use crate::models::{Mode, Model, Propagation};

pub use gnnexplainer::{GnnExplainer, GnnExplainerConfig};
pub use maskio::{encode_mask, read_mask, write_mask, MaskEncoding};
pub use shapley::{exact_shapley, shapley_mc, Sampling};
pub use subgraphx::{SubgraphX, SubgraphXConfig};

/// A differentiable node classifier evaluated on (sub)graphs.
pub trait NodeModel {
    /// Receptive-field radius.
    fn hops(&self) -> usize;

    /// Row-wise log-probabilities for features `x` on `prop`.
    fn log_probs<'t>(&self, tape: &'t Tape, x: Tensor<'t>, prop: &Propagation) -> Result<Tensor<'t>>;
}

/// A trained [`Model`] in evaluation mode whose parameter buffers are shared
/// across calls instead of copied.
pub struct FrozenModel<'m> {
    model: &'m Model,
    params: Vec<Rc<Matrix>>,
}

impl<'m> FrozenModel<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self {
            model,
            params: model.params.values.iter().cloned().map(Rc::new).collect(),
        }
    }
}

impl NodeModel for FrozenModel<'_> {
    fn hops(&self) -> usize {
        self.model.hops()
    }

    fn log_probs<'t>(&self, tape: &'t Tape, x: Tensor<'t>, prop: &Propagation) -> Result<Tensor<'t>> {
        let params: Vec<Tensor<'t>> = self.params.iter().map(|p| tape.leaf_rc(p.clone(), false)).collect();
        Ok(self.model.forward(tape, &params, x, prop, Mode::Eval)?.log_probs)
    }
}

/// Evaluates `model` on fixed features, off the caller's tape.
pub fn evaluate(model: &dyn NodeModel, x: &Matrix, prop: &Propagation) -> Result<Matrix> {
    let tape = Tape::new();
    let x = tape.constant(x.clone());
    Ok((*model.log_probs(&tape, x, prop)?.value()).clone())
}

/// Importance mask over the features of the nodes in `support`.
///
/// Row `i` of `feature_mask` belongs to node `support[i]` (ids of the graph
/// that was explained). Entries lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMask {
    pub explainer: String,
    pub target: usize,
    pub seed: u64,
    pub config: serde_json::Value,
    pub support: Vec<usize>,
    pub feature_mask: Matrix,
    pub subgraph: Option<Vec<usize>>,
}

impl ExplanationMask {
    /// Mask over all `num_nodes` nodes, zero outside the support.
    pub fn to_full(&self, num_nodes: usize) -> Matrix {
        let mut full = Matrix::zeros(num_nodes, self.feature_mask.cols());
        for (i, &u) in self.support.iter().enumerate() {
            full.row_mut(u).copy_from_slice(self.feature_mask.row(i));
        }
        full
    }
}

/// A post-hoc explanation method.
pub trait Explainer: Send + Sync {
    fn id(&self) -> &'static str;

    fn config_json(&self) -> serde_json::Value;

    /// Explains the prediction at `target`. `keys`, when given, maps node
    /// ids of `g` to stable identities used for per-node randomness, so the
    /// same node draws the same numbers in a relabeled graph.
    fn explain(
        &self,
        model: &dyn NodeModel,
        g: &Graph,
        target: usize,
        seed: u64,
        keys: Option<&[usize]>,
    ) -> Result<ExplanationMask>;
}
