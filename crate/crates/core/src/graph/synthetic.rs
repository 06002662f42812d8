use gnnbench_autodiff::Matrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::seed;

/// Stochastic block model with planted binary class signatures.
///
/// Node `i` belongs to class `i % num_classes`. Intra-class pairs connect
/// with probability `p_in` and inter-class pairs with
/// `p_in * (1 - homophily)`, with `p_in` chosen so the expected degree is
/// `avg_degree`. The feature columns are split into `num_classes` equal
/// blocks; a node's own block is set to 1, then every entry flips with
/// probability `feature_noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub homophily: f64,
    #[serde(default = "default_degree")]
    pub avg_degree: f64,
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
    pub seed: u64,
}

fn default_degree() -> f64 {
    4.0
}

fn default_noise() -> f64 {
    0.1
}

impl SyntheticSpec {
    pub fn new(num_nodes: usize, num_classes: usize, feature_dim: usize, homophily: f64, seed: u64) -> Self {
        Self {
            num_nodes,
            num_classes,
            feature_dim,
            homophily,
            avg_degree: default_degree(),
            feature_noise: default_noise(),
            seed,
        }
    }

    pub fn generate(&self) -> Result<Graph> {
        let (n, k, d) = (self.num_nodes, self.num_classes, self.feature_dim);
        if n == 0 || k == 0 {
            return Err(Error::Parameter("synthetic graph needs at least one node and one class".into()));
        }
        if n < k || d < k {
            return Err(Error::Parameter(format!(
                "synthetic graph needs num_nodes >= num_classes and feature_dim >= num_classes (got {n}, {k}, {d})"
            )));
        }
        if !(0.0..=1.0).contains(&self.homophily) || !(0.0..=1.0).contains(&self.feature_noise) {
            return Err(Error::Parameter("homophily and feature_noise must lie in [0, 1]".into()));
        }
        let mut rng = seed::rng(self.seed);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let block = d / k;
        let mut features = Matrix::zeros(n, d);
        for i in 0..n {
            let c = labels[i];
            for j in 0..d {
                let planted = j >= c * block && j < (c + 1) * block;
                let flip = rng.random_bool(self.feature_noise);
                features.set(i, j, if planted != flip { 1.0 } else { 0.0 });
            }
        }
        let per_class = n as f64 / k as f64;
        let same = (per_class - 1.0).max(0.0);
        let other = n as f64 - per_class;
        let mass = same + (1.0 - self.homophily) * other;
        let p_in = if mass > 0.0 { (self.avg_degree / mass).min(1.0) } else { 0.0 };
        let p_out = p_in * (1.0 - self.homophily);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let p = if labels[u] == labels[v] { p_in } else { p_out };
                if p > 0.0 && rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        Graph::new(features, edges, labels, k)
    }
}

/// SBM graph with default degree and noise; see [`SyntheticSpec`].
pub fn generate_synthetic(
    num_nodes: usize,
    num_classes: usize,
    feature_dim: usize,
    homophily: f64,
    seed: u64,
) -> Result<Graph> {
    SyntheticSpec::new(num_nodes, num_classes, feature_dim, homophily, seed).generate()
}
