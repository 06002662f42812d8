//! Node-classification graphs: storage, ingestion, generation, splitting and
//! perturbation.

mod bundle;
mod perturb;
mod split;
mod synthetic;

use std::collections::{BTreeSet, VecDeque};

use gnnbench_autodiff::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{convert_linqs, load_graph_bundle, save_graph_bundle, BundleMeta};
pub use perturb::{perturb, NodeRemap, PerturbationSpec};
pub use split::{split, SplitMasks};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Undirected attributed graph with one class label per node.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted, without
/// self-loops or duplicates.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: Matrix,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    num_classes: usize,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Canonicalizes `edges` (orientation, order, duplicates) and rejects
    /// self-loops and out-of-range ids.
    pub fn new(
        features: Matrix,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop on node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        adjacency.iter_mut().for_each(|a| a.sort_unstable());
        Ok(Self {
            features,
            edges,
            labels,
            num_classes,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Sorted neighbor ids of `u`.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes() && self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Same structure and labels with a replaced feature matrix.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_nodes() {
            return Err(Error::Validation(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.num_nodes()
            )));
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Same nodes with a subset of the edges.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            edges,
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// Nodes within `hops` edges of `center`, ascending, `center` included.
    pub fn k_hop_nodes(&self, center: usize, hops: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_nodes()];
        dist[center] = 0;
        let mut queue = VecDeque::from([center]);
        let mut found = vec![center];
        while let Some(u) = queue.pop_front() {
            if dist[u] == hops {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    found.push(v);
                    queue.push_back(v);
                }
            }
        }
        found.sort_unstable();
        found
    }

    /// Induced subgraph on the `hops`-hop neighborhood of `center`.
    pub fn k_hop_subgraph(&self, center: usize, hops: usize) -> Result<Subgraph> {
        if center >= self.num_nodes() {
            return Err(Error::Parameter(format!(
                "node {center} outside 0..{}",
                self.num_nodes()
            )));
        }
        Ok(self.induced(&self.k_hop_nodes(center, hops), center))
    }

    /// Induced subgraph on ascending `nodes`, which must contain `center`.
    pub fn induced(&self, nodes: &[usize], center: usize) -> Subgraph {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (i, &u) in nodes.iter().enumerate() {
            local[u] = i;
        }
        let mut edges = Vec::new();
        for (i, &u) in nodes.iter().enumerate() {
            for &v in &self.adjacency[u] {
                let j = local[v];
                if j != usize::MAX && i < j {
                    edges.push((i, j));
                }
            }
        }
        Subgraph {
            center: local[center],
            features: self.features.select_rows(nodes),
            full_degree: nodes.iter().map(|&u| self.degree(u)).collect(),
            nodes: nodes.to_vec(),
            edges,
        }
    }
}

/// A node-induced piece of a larger graph, in local ids `0..nodes.len()`.
///
/// `full_degree[i]` is the degree of `nodes[i]` in the parent graph, which
/// degree-normalized layers need to reproduce parent-graph outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub center: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    pub full_degree: Vec<usize>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Whether every entry of `features` is 0 or 1.
pub fn is_binary(features: &Matrix) -> bool {
    features.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Count summary used in logs and metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

impl From<&Graph> for GraphStats {
    fn from(g: &Graph) -> Self {
        Self {
            num_nodes: g.num_nodes(),
            num_edges: g.num_edges(),
            num_features: g.num_features(),
            num_classes: g.num_classes(),
        }
    }
}
