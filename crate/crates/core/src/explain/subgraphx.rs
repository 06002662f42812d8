use std::collections::{HashMap, VecDeque};

use gnnbench_autodiff::Matrix;
use serde::{Deserialize, Serialize};

use super::{evaluate, shapley_mc, ExplanationMask, Explainer, NodeModel, Sampling};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::Propagation;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubgraphXConfig {
    pub rollout: usize,
    pub min_atoms: usize,
    pub c_puct: f64,
    pub expand_atoms: usize,
    pub local_radius: usize,
    pub sample_num: usize,
    pub reward_method: String,
    pub high2low: bool,
    pub subgraph_building: String,
    pub max_nodes: usize,
}

impl Default for SubgraphXConfig {
    fn default() -> Self {
        Self {
            rollout: 20,
            min_atoms: 5,
            c_puct: 10.0,
            expand_atoms: 14,
            local_radius: 4,
            sample_num: 100,
            reward_method: "mc_l_shapley".into(),
            high2low: false,
            subgraph_building: "zero_filling".into(),
            max_nodes: 5,
        }
    }
}

/// Monte Carlo tree search over connected node subsets of the target's
/// computational subgraph, scored by a sampled Shapley value.
///
/// A child drops one low-degree node and keeps the component holding the
/// target. Scores are pure functions of `(seed, subset)`; ties in selection
/// go to the child that dropped the smallest node id.
#[derive(Clone, Debug, Default)]
pub struct SubgraphX {
    pub config: SubgraphXConfig,
}

struct TreeNode {
    coalition: Vec<usize>,
    score: f64,
    visits: u32,
    best: f64,
    children: Option<Vec<usize>>,
}

struct Search<'a> {
    cfg: &'a SubgraphXConfig,
    model: &'a dyn NodeModel,
    x: &'a Matrix,
    prop: Propagation,
    adjacency: Vec<Vec<usize>>,
    center: usize,
    class: usize,
    seed: u64,
    arena: Vec<TreeNode>,
    index: HashMap<Vec<usize>, usize>,
}

impl Search<'_> {
    /// Probability of the explained class with all rows outside `keep`
    /// zero-filled.
    fn value(&self, keep: &[bool]) -> Result<f64> {
        let mut x = self.x.clone();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                x.row_mut(r).fill(0.0);
            }
        }
        let logp = evaluate(self.model, &x, &self.prop)?;
        Ok(logp.get(self.center, self.class).exp())
    }

    /// Nodes within `local_radius - 1` hops of `coalition`.
    fn local_region(&self, coalition: &[usize]) -> Vec<bool> {
        let mut inside = vec![false; self.adjacency.len()];
        let mut frontier: Vec<usize> = coalition.to_vec();
        for &u in coalition {
            inside[u] = true;
        }
        for _ in 1..self.cfg.local_radius {
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &self.adjacency[u] {
                    if !inside[v] {
                        inside[v] = true;
                        next.push(v);
                    }
                }
            }
            frontier = next;
        }
        inside
    }

    fn score(&self, coalition: &[usize]) -> Result<f64> {
        if coalition.is_empty() {
            return Ok(0.0);
        }
        let n = self.adjacency.len();
        let region = self.local_region(coalition);
        let mut in_coalition = vec![false; n];
        coalition.iter().for_each(|&u| in_coalition[u] = true);
        let others: Vec<usize> = (0..n).filter(|&u| region[u] && !in_coalition[u]).collect();
        // Nodes outside the local region stay present in every evaluation.
        let base: Vec<bool> = (0..n).map(|u| !region[u]).collect();
        let tag = coalition.iter().fold(seed::fnv1a("coalition"), |h, &u| seed::derive(h, u as u64));
        let mut rng = seed::rng(seed::derive(self.seed, tag));
        shapley_mc(&others, Sampling::MonteCarlo(self.cfg.sample_num), &mut rng, |s| {
            let mut without = base.clone();
            s.iter().for_each(|&u| without[u] = true);
            let mut with = without.clone();
            coalition.iter().for_each(|&u| with[u] = true);
            Ok(self.value(&with)? - self.value(&without)?)
        })
    }

    fn node(&mut self, coalition: Vec<usize>) -> Result<usize> {
        if let Some(&i) = self.index.get(&coalition) {
            return Ok(i);
        }
        let score = self.score(&coalition)?;
        self.arena.push(TreeNode {
            coalition: coalition.clone(),
            score,
            visits: 0,
            best: 0.0,
            children: None,
        });
        self.index.insert(coalition, self.arena.len() - 1);
        Ok(self.arena.len() - 1)
    }

    /// Component of `members` that contains the target, ascending.
    fn component(&self, members: &[bool]) -> Vec<usize> {
        let mut seen = vec![false; members.len()];
        seen[self.center] = true;
        let mut queue = VecDeque::from([self.center]);
        let mut out = vec![self.center];
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if members[v] && !seen[v] {
                    seen[v] = true;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn expand(&mut self, idx: usize) -> Result<Vec<usize>> {
        let coalition = self.arena[idx].coalition.clone();
        let mut members = vec![false; self.adjacency.len()];
        coalition.iter().for_each(|&u| members[u] = true);
        let degree = |u: usize| self.adjacency[u].iter().filter(|&&v| members[v]).count();
        let mut candidates: Vec<(usize, usize)> = coalition
            .iter()
            .filter(|&&u| u != self.center)
            .map(|&u| (degree(u), u))
            .collect();
        if self.cfg.high2low {
            candidates.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        } else {
            candidates.sort_unstable();
        }
        let mut removed_and_child: Vec<(usize, usize)> = Vec::new();
        for &(_, u) in candidates.iter().take(self.cfg.expand_atoms) {
            members[u] = false;
            let child = self.component(&members);
            members[u] = true;
            let c = self.node(child)?;
            if !removed_and_child.iter().any(|&(_, existing)| existing == c) {
                removed_and_child.push((u, c));
            }
        }
        removed_and_child.sort_unstable();
        Ok(removed_and_child.into_iter().map(|(_, c)| c).collect())
    }

    fn rollout(&mut self, idx: usize) -> Result<f64> {
        if self.arena[idx].coalition.len() <= self.cfg.min_atoms {
            return Ok(self.arena[idx].score);
        }
        let children = match self.arena[idx].children.clone() {
            Some(c) => c,
            None => {
                let c = self.expand(idx)?;
                self.arena[idx].children = Some(c.clone());
                c
            }
        };
        if children.is_empty() {
            return Ok(self.arena[idx].score);
        }
        let total: u32 = children.iter().map(|&c| self.arena[c].visits).sum();
        let sqrt_total = f64::from(total).sqrt();
        let mut chosen = children[0];
        let mut best = f64::NEG_INFINITY;
        for &c in &children {
            let n = &self.arena[c];
            let q = if n.visits > 0 { n.best } else { 0.0 };
            let u = self.cfg.c_puct * n.score * sqrt_total / (1.0 + f64::from(n.visits));
            if q + u > best {
                best = q + u;
                chosen = c;
            }
        }
        let v = self.rollout(chosen)?;
        let n = &mut self.arena[chosen];
        n.best = if n.visits == 0 { v } else { n.best.max(v) };
        n.visits += 1;
        Ok(v)
    }
}

impl SubgraphX {
    pub fn new(config: SubgraphXConfig) -> Self {
        Self { config }
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.reward_method != "mc_l_shapley" {
            return Err(Error::Config(format!("unsupported reward_method {:?}", c.reward_method)));
        }
        if c.subgraph_building != "zero_filling" {
            return Err(Error::Config(format!("unsupported subgraph_building {:?}", c.subgraph_building)));
        }
        if c.max_nodes == 0 || c.local_radius == 0 || c.sample_num == 0 {
            return Err(Error::Config("max_nodes, local_radius and sample_num must be positive".into()));
        }
        Ok(())
    }
}

impl Explainer for SubgraphX {
    fn id(&self) -> &'static str {
        "subgraphx"
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("plain config")
    }

    fn explain(
        &self,
        model: &dyn NodeModel,
        g: &Graph,
        target: usize,
        seed: u64,
        _keys: Option<&[usize]>,
    ) -> Result<ExplanationMask> {
        self.validate()?;
        let sub = g.k_hop_subgraph(target, model.hops())?;
        let prop = Propagation::from_subgraph(&sub);
        let class = evaluate(model, &sub.features, &prop)?.argmax_rows()[sub.center];
        let mut adjacency = vec![Vec::new(); sub.len()];
        for &(u, v) in &sub.edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let mut search = Search {
            cfg: &self.config,
            model,
            x: &sub.features,
            prop,
            adjacency,
            center: sub.center,
            class,
            seed,
            arena: Vec::new(),
            index: HashMap::new(),
        };
        let root = search.node((0..sub.len()).collect())?;
        for _ in 0..self.config.rollout {
            search.rollout(root)?;
        }
        let eligible = search
            .arena
            .iter()
            .filter(|n| n.coalition.len() <= self.config.max_nodes)
            .max_by(|a, b| {
                a.score
                    .total_cmp(&b.score)
                    .then(b.coalition.len().cmp(&a.coalition.len()))
                    .then(b.coalition.cmp(&a.coalition))
            });
        let chosen = match eligible {
            Some(n) => n.coalition.clone(),
            None => search
                .arena
                .iter()
                .min_by(|a, b| a.coalition.len().cmp(&b.coalition.len()).then(a.coalition.cmp(&b.coalition)))
                .map(|n| n.coalition.clone())
                .expect("root exists"),
        };
        let mut mask = Matrix::zeros(sub.len(), g.num_features());
        for &u in &chosen {
            mask.row_mut(u).fill(1.0);
        }
        Ok(ExplanationMask {
            explainer: self.id().into(),
            target,
            seed,
            config: self.config_json(),
            subgraph: Some(chosen.iter().map(|&u| sub.nodes[u]).collect()),
            support: sub.nodes,
            feature_mask: mask,
        })
    }
}
