use std::rc::Rc;

use gnnbench_autodiff::{AdamConfig, AdamState, Matrix, Tape};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{evaluate, ExplanationMask, Explainer, NodeModel};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::Propagation;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnExplainerConfig {
    pub epochs: usize,
    pub lr: f64,
    pub node_mask_type: String,
    pub edge_mask_type: Option<String>,
    /// Inert without an edge mask.
    pub edge_size: f64,
    pub node_feat_size: f64,
    pub node_feat_reduction: String,
    /// Inert without an edge mask.
    pub edge_ent: f64,
    pub node_feat_ent: f64,
    pub eps: f64,
    pub init_std: f64,
}

impl Default for GnnExplainerConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            node_mask_type: "attributes".into(),
            edge_mask_type: None,
            edge_size: 0.005,
            node_feat_size: 1.0,
            node_feat_reduction: "mean".into(),
            edge_ent: 1.0,
            node_feat_ent: 0.1,
            eps: 1e-15,
            init_std: 0.1,
        }
    }
}

/// Feature-mask optimization over the target's computational subgraph.
///
/// The mask has one logit per (node, feature) of the subgraph. Logits of
/// zero-valued features never influence the output and are not stored.
/// Epoch 0 minimizes the prediction loss alone; entries whose gradient is
/// nonzero there form the hard mask, the only entries the size and entropy
/// terms see afterwards and the only nonzero entries of the result.
#[derive(Clone, Debug, Default)]
pub struct GnnExplainer {
    pub config: GnnExplainerConfig,
}

impl GnnExplainer {
    pub fn new(config: GnnExplainerConfig) -> Self {
        Self { config }
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.node_mask_type != "attributes" {
            return Err(Error::Config(format!("unsupported node_mask_type {:?}", c.node_mask_type)));
        }
        if c.edge_mask_type.is_some() {
            return Err(Error::Config("edge masks are not supported".into()));
        }
        if c.node_feat_reduction != "mean" && c.node_feat_reduction != "sum" {
            return Err(Error::Config(format!("unsupported reduction {:?}", c.node_feat_reduction)));
        }
        if c.epochs == 0 || !(c.lr > 0.0) || !(c.init_std >= 0.0) {
            return Err(Error::Config("epochs, lr and init_std must be positive".into()));
        }
        Ok(())
    }
}

impl Explainer for GnnExplainer {
    fn id(&self) -> &'static str {
        "gnnexplainer"
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
        keys: Option<&[usize]>,
    ) -> Result<ExplanationMask> {
        self.validate()?;
        let c = &self.config;
        let sub = g.k_hop_subgraph(target, model.hops())?;
        let prop = Propagation::from_subgraph(&sub);
        let x = &sub.features;
        let (rows, cols) = x.shape();
        let centre = Rc::new(vec![sub.center]);

        let predicted = evaluate(model, x, &prop)?.argmax_rows()[sub.center];
        let class = Rc::new(vec![predicted]);

        let positions: Vec<usize> = (0..rows * cols).filter(|&p| x.data()[p] != 0.0).collect();
        let values = Matrix::column(positions.iter().map(|&p| x.data()[p]).collect());
        let normal = Normal::new(0.0, c.init_std).map_err(|e| Error::Config(e.to_string()))?;
        let mut logits = Vec::with_capacity(positions.len());
        let mut next = 0;
        for (i, &node) in sub.nodes.iter().enumerate() {
            let key = keys.map_or(node, |k| k[node]);
            let mut rng = seed::rng(seed::derive(seed, key as u64));
            let draws: Vec<f64> = (0..cols).map(|_| normal.sample(&mut rng)).collect();
            while next < positions.len() && positions[next] / cols == i {
                logits.push(draws[positions[next] % cols]);
                next += 1;
            }
        }
        let positions = Rc::new(positions);
        let mut params = vec![Matrix::column(logits)];
        let mut adam = AdamState::new(AdamConfig::with_lr(c.lr), &params);
        let mut hard: Option<Rc<Vec<usize>>> = None;

        for epoch in 0..c.epochs {
            let tape = Tape::new();
            let m = tape.param(params[0].clone());
            let s = m.sigmoid();
            let masked = s
                .mul(tape.constant(values.clone()))?
                .scatter_entries(positions.clone(), (rows, cols))?;
            let out = model.log_probs(&tape, masked, &prop)?;
            let mut loss = out.nll_loss(centre.clone(), class.clone())?;
            if let Some(h) = hard.as_ref().filter(|h| !h.is_empty()) {
                let sh = s.gather_rows(h.clone())?;
                let size = if c.node_feat_reduction == "mean" { sh.mean() } else { sh.sum() };
                loss = loss.add(size.scale(c.node_feat_size))?;
                loss = loss.add(sh.bernoulli_entropy(c.eps).mean().scale(c.node_feat_ent))?;
            }
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            let mut grads = tape.backward(loss)?;
            let grad = grads.take(m);
            if epoch == 0 {
                let nonzero = (0..grad.len()).filter(|&k| grad.data()[k] != 0.0).collect();
                hard = Some(Rc::new(nonzero));
            }
            adam.step(&mut params, &[grad])?;
        }

        let mut mask = Matrix::zeros(rows, cols);
        for &k in hard.as_deref().map_or(&[][..], Vec::as_slice) {
            mask.data_mut()[positions[k]] = gnnbench_autodiff::sigmoid(params[0].data()[k]);
        }
        Ok(ExplanationMask {
            explainer: self.id().into(),
            target,
            seed,
            config: self.config_json(),
            support: sub.nodes,
            feature_mask: mask,
            subgraph: None,
        })
    }
}
