use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::seed;

/// Disjoint train/test masks covering every node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn train_nodes(&self) -> Vec<usize> {
        (0..self.train.len()).filter(|&i| self.train[i]).collect()
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        (0..self.test.len()).filter(|&i| self.test[i]).collect()
    }
}

/// Uniformly random partition with `round(train_fraction * n)` train nodes.
pub fn split(g: &Graph, train_fraction: f64, seed: u64) -> Result<SplitMasks> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n = g.num_nodes();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut train = vec![false; n];
    for &i in &order[..n_train] {
        train[i] = true;
    }
    let test = train.iter().map(|t| !t).collect();
    Ok(SplitMasks { train, test })
}
