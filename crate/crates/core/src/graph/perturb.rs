use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, is_binary};
use crate::error::{Error, Result};
use crate::seed;

/// Budget of a random input perturbation.
///
/// `feature_fraction` bounds the share of one node's feature entries that may
/// change; `node_removal_fraction` bounds the share of nodes removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub feature_fraction: f64,
    pub node_removal_fraction: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            feature_fraction: 0.05,
            node_removal_fraction: 0.05,
            seed,
        }
    }

    pub fn identity(seed: u64) -> Self {
        Self {
            feature_fraction: 0.0,
            node_removal_fraction: 0.0,
            seed,
        }
    }
}

/// Correspondence between node ids before and after removal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRemap {
    old_to_new: Vec<Option<usize>>,
    new_to_old: Vec<usize>,
}

impl NodeRemap {
    pub fn identity(n: usize) -> Self {
        Self {
            old_to_new: (0..n).map(Some).collect(),
            new_to_old: (0..n).collect(),
        }
    }

    pub fn new_id(&self, old: usize) -> Option<usize> {
        self.old_to_new.get(old).copied().flatten()
    }

    pub fn old_id(&self, new: usize) -> usize {
        self.new_to_old[new]
    }

    pub fn survivors(&self) -> &[usize] {
        &self.new_to_old
    }

    pub fn is_identity(&self) -> bool {
        self.new_to_old.len() == self.old_to_new.len()
    }
}

/// Random feature corruption plus node removal, never touching the existence
/// of `protected`.
///
/// Every node gets exactly `floor(feature_fraction * d)` distinct feature
/// entries altered: flipped when the whole matrix is binary, otherwise
/// replaced by a random value from the same column. Then
/// `floor(node_removal_fraction * n)` nodes other than `protected` are removed
/// with their edges, and survivors are re-indexed in ascending order.
pub fn perturb(g: &Graph, spec: &PerturbationSpec, protected: usize) -> Result<(Graph, NodeRemap)> {
    let (n, d) = (g.num_nodes(), g.num_features());
    if protected >= n {
        return Err(Error::Parameter(format!("protected node {protected} outside 0..{n}")));
    }
    for f in [spec.feature_fraction, spec.node_removal_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Parameter(format!("perturbation fraction {f} outside [0, 1]")));
        }
    }
    let mut rng = seed::rng(spec.seed);
    let source = g.features();
    let mut features = source.clone();
    let per_node = (spec.feature_fraction * d as f64).floor() as usize;
    if per_node > 0 {
        let binary = is_binary(source);
        for i in 0..n {
            for j in sample(&mut rng, d, per_node).into_iter() {
                let v = if binary {
                    1.0 - source.get(i, j)
                } else {
                    source.get(rng.random_range(0..n), j)
                };
                features.set(i, j, v);
            }
        }
    }

    let removals = ((spec.node_removal_fraction * n as f64).floor() as usize).min(n - 1);
    let mut removed = vec![false; n];
    for k in sample(&mut rng, n - 1, removals).into_iter() {
        // Candidates skip the protected id.
        removed[if k >= protected { k + 1 } else { k }] = true;
    }
    let mut old_to_new = vec![None; n];
    let mut new_to_old = Vec::with_capacity(n - removals);
    for (u, gone) in removed.iter().enumerate() {
        if !gone {
            old_to_new[u] = Some(new_to_old.len());
            new_to_old.push(u);
        }
    }
    let features = if removals == 0 { features } else { features.select_rows(&new_to_old) };
    let edges = g
        .edges()
        .iter()
        .filter_map(|&(u, v)| Some((old_to_new[u]?, old_to_new[v]?)));
    let labels = new_to_old.iter().map(|&u| g.labels()[u]).collect();
    let graph = Graph::new(features, edges, labels, g.num_classes())?;
    Ok((graph, NodeRemap { old_to_new, new_to_old }))
}
