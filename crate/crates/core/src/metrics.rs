//! Fidelity, sparsity, stability and consistency of explanation masks.

use gnnbench_autodiff::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{evaluate, ExplanationMask, Explainer, NodeModel};
use crate::graph::{perturb, Graph, NodeRemap, PerturbationSpec};
use crate::models::Propagation;

pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityMode {
    /// Share of targets whose predicted class survives masking.
    #[default]
    Agreement,
    /// Mean absolute change in the probability of the predicted class.
    AbsoluteDifference,
}

/// Scores each mask by re-running `model` on `X ⊙ M` over the target's
/// receptive field and averages over masks.
pub fn fidelity(model: &dyn NodeModel, g: &Graph, masks: &[ExplanationMask], mode: FidelityMode) -> Result<f64> {
    if masks.is_empty() {
        return Err(Error::UndefinedMetric("fidelity of an empty mask list".into()));
    }
    let mut total = 0.0;
    for mask in masks {
        total += fidelity_one(model, g, mask, mode)?;
    }
    Ok(total / masks.len() as f64)
}

fn fidelity_one(model: &dyn NodeModel, g: &Graph, mask: &ExplanationMask, mode: FidelityMode) -> Result<f64> {
    check_support(mask, g)?;
    let sub = g.k_hop_subgraph(mask.target, model.hops())?;
    let full = mask.to_full(g.num_nodes());
    let mut masked = sub.features.clone();
    for (i, &u) in sub.nodes.iter().enumerate() {
        for (x, m) in masked.row_mut(i).iter_mut().zip(full.row(u)) {
            *x *= m;
        }
    }
    let prop = Propagation::from_subgraph(&sub);
    let before = evaluate(model, &sub.features, &prop)?;
    let after = evaluate(model, &masked, &prop)?;
    let c = sub.center;
    let class = argmax(before.row(c));
    Ok(match mode {
        FidelityMode::Agreement => f64::from(u8::from(argmax(after.row(c)) == class)),
        FidelityMode::AbsoluteDifference => (after.get(c, class).exp() - before.get(c, class).exp()).abs(),
    })
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn check_support(mask: &ExplanationMask, g: &Graph) -> Result<()> {
    if mask.target >= g.num_nodes() || mask.support.iter().any(|&u| u >= g.num_nodes()) {
        return Err(Error::Alignment(format!(
            "mask for node {} references nodes outside a {}-node graph",
            mask.target,
            g.num_nodes()
        )));
    }
    if mask.feature_mask.cols() != g.num_features() || mask.feature_mask.rows() != mask.support.len() {
        return Err(Error::Alignment(format!(
            "mask for node {} has shape {:?}; expected {} rows and {} features",
            mask.target,
            mask.feature_mask.shape(),
            mask.support.len(),
            g.num_features()
        )));
    }
    Ok(())
}

/// Fraction of mask entries above `zero_tol`.
pub fn sparsity(mask: &ExplanationMask, zero_tol: f64) -> Result<f64> {
    let data = mask.feature_mask.data();
    if data.is_empty() {
        return Err(Error::UndefinedMetric(format!("sparsity of an empty mask for node {}", mask.target)));
    }
    Ok(data.iter().filter(|v| **v > zero_tol).count() as f64 / data.len() as f64)
}

/// L2 distance between two masks over the nodes both cover, matching rows
/// through `remap` (original ids to perturbed ids).
pub fn mask_distance(original: &ExplanationMask, perturbed: &ExplanationMask, remap: &NodeRemap) -> Result<f64> {
    let (a, b) = (&original.feature_mask, &perturbed.feature_mask);
    if a.cols() != b.cols() {
        return Err(Error::Alignment(format!("feature dimensions {} and {} differ", a.cols(), b.cols())));
    }
    let mut row_of = std::collections::HashMap::with_capacity(perturbed.support.len());
    for (i, &u) in perturbed.support.iter().enumerate() {
        row_of.insert(u, i);
    }
    let mut sq = 0.0;
    for (i, &u) in original.support.iter().enumerate() {
        let Some(j) = remap.new_id(u).and_then(|v| row_of.get(&v)) else {
            continue;
        };
        sq += a.row(i).iter().zip(b.row(*j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(sq.sqrt())
}

/// One perturbation trial: the corruption applied and the explainer seed
/// used on both graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityTrial {
    pub perturbation: PerturbationSpec,
    pub explain_seed: u64,
}

/// Inputs shared by every stability trial of one target.
pub struct StabilityInput<'a> {
    pub model: &'a dyn NodeModel,
    pub explainer: &'a dyn Explainer,
    /// Raw graph; `prepare` maps any raw graph to what the model consumes.
    pub graph: &'a Graph,
    pub prepare: &'a dyn Fn(&Graph) -> Result<Graph>,
    pub target: usize,
}

/// Mean mask distance between explanations of the clean and the perturbed
/// graph. `originals[k]`, when supplied, must be the explanation of the
/// prepared clean graph under `trials[k].explain_seed`.
pub fn stability(input: &StabilityInput<'_>, trials: &[StabilityTrial], originals: Option<&[ExplanationMask]>) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::UndefinedMetric("stability needs at least one trial".into()));
    }
    if originals.is_some_and(|o| o.len() != trials.len()) {
        return Err(Error::Alignment("one original mask per stability trial is required".into()));
    }
    let clean = if originals.is_none() { Some((input.prepare)(input.graph)?) } else { None };
    let mut total = 0.0;
    for (k, trial) in trials.iter().enumerate() {
        let original = match originals {
            Some(o) => o[k].clone(),
            None => input.explainer.explain(
                input.model,
                clean.as_ref().expect("prepared above"),
                input.target,
                trial.explain_seed,
                None,
            )?,
        };
        let (explained, remap) = perturbed_explanation(input, trial)?;
        total += mask_distance(&original, &explained, &remap)?;
    }
    Ok(total / trials.len() as f64)
}

/// Explains the target on a perturbed copy of the graph. The returned mask
/// uses perturbed node ids; the remap translates from original ids.
pub fn perturbed_explanation(input: &StabilityInput<'_>, trial: &StabilityTrial) -> Result<(ExplanationMask, NodeRemap)> {
    let (noisy, remap) = perturb(input.graph, &trial.perturbation, input.target)?;
    let noisy = (input.prepare)(&noisy)?;
    let new_target = remap
        .new_id(input.target)
        .ok_or_else(|| Error::Validation(format!("perturbation removed protected node {}", input.target)))?;
    let explained = input
        .explainer
        .explain(input.model, &noisy, new_target, trial.explain_seed, Some(remap.survivors()))?;
    Ok((explained, remap))
}

/// Mean cosine similarity of consecutive masks; a zero vector scores 0.
pub fn consistency(masks: &[ExplanationMask]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::UndefinedMetric("consistency needs at least two masks".into()));
    }
    let first = &masks[0];
    for m in &masks[1..] {
        if m.support != first.support || m.feature_mask.shape() != first.feature_mask.shape() {
            return Err(Error::Alignment(format!(
                "consistency masks for node {} cover different supports",
                first.target
            )));
        }
    }
    let total: f64 = masks.windows(2).map(|w| cosine(&w[0].feature_mask, &w[1].feature_mask)).sum();
    Ok(total / (masks.len() - 1) as f64)
}

fn cosine(a: &Matrix, b: &Matrix) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    let na = a.norm_l2();
    let nb = b.norm_l2();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// `"0.998 ± 0.003"`.
    pub fn display(&self, decimals: usize) -> String {
        format!("{:.*} ± {:.*}", decimals, self.mean, decimals, self.std)
    }
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("summary of no values".into()));
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        mean,
        std,
        count: values.len(),
    })
}

/// Metric values of one explained node, each already averaged over runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub fidelity_agreement: f64,
    pub fidelity_abs: f64,
    pub sparsity: f64,
    pub stability: f64,
    pub consistency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fidelity_mode: FidelityMode,
    /// Fidelity under `fidelity_mode`; both readings follow.
    pub fidelity: Summary,
    pub fidelity_agreement: Summary,
    pub fidelity_abs: Summary,
    pub sparsity: Summary,
    pub stability: Summary,
    pub consistency: Summary,
    pub nodes: usize,
    pub runs: usize,
}

/// Summaries over explained nodes. Sums run over sorted values, so the
/// result does not depend on input order.
pub fn aggregate(cells: &[NodeMetrics], runs: usize, fidelity_mode: FidelityMode) -> Result<MetricReport> {
    if cells.is_empty() {
        return Err(Error::UndefinedMetric("aggregate of no nodes".into()));
    }
    let pick = |f: fn(&NodeMetrics) -> f64| summarize(&cells.iter().map(f).collect::<Vec<_>>());
    let fidelity_agreement = pick(|c| c.fidelity_agreement)?;
    let fidelity_abs = pick(|c| c.fidelity_abs)?;
    Ok(MetricReport {
        fidelity_mode,
        fidelity: match fidelity_mode {
            FidelityMode::Agreement => fidelity_agreement,
            FidelityMode::AbsoluteDifference => fidelity_abs,
        },
        fidelity_agreement,
        fidelity_abs,
        sparsity: pick(|c| c.sparsity)?,
        stability: pick(|c| c.stability)?,
        consistency: pick(|c| c.consistency)?,
        nodes: cells.len(),
        runs,
    })
}
