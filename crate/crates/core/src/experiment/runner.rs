use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExplainerId};
use super::{explain_seed, iteration_seed, model_seed, perturbation_seed, report, run_seed};
use crate::defense::{fit_defended, prepare_graph, DefenseId};
use crate::error::{Error, Result};
use crate::explain::{
    read_mask, write_mask, Explainer, ExplanationMask, FrozenModel, GnnExplainer, MaskEncoding, NodeModel, SubgraphX,
};
use crate::graph::{perturb, split, Graph, NodeRemap, PerturbationSpec, SplitMasks};
use crate::metrics::{
    aggregate, consistency, fidelity, mask_distance, perturbed_explanation, sparsity, FidelityMode, MetricReport,
    NodeMetrics, StabilityInput, StabilityTrial,
};
use crate::models::{accuracy, load_checkpoint, save_checkpoint, Architecture, TrainConfig};
use crate::seed;

/// Identifies one grid cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellKey {
    pub dataset: String,
    pub architecture: Architecture,
    pub defense: DefenseId,
    pub explainer: ExplainerId,
    pub iteration: usize,
}

impl CellKey {
    /// File-name stem, unique within one experiment.
    pub fn slug(&self) -> String {
        format!(
            "it{:02}_{}_{}_{}",
            self.iteration,
            self.architecture.id(),
            self.defense.id(),
            self.explainer.id()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub master_seed: u64,
    pub nodes_per_iteration: usize,
    pub runs_per_node: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    pub feature_fraction: f64,
    pub node_removal_fraction: f64,
    pub zero_tol: f64,
    pub fidelity_mode: FidelityMode,
    pub attack: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSeeds {
    pub iteration: u64,
    pub split: u64,
    pub targets: u64,
    pub model: u64,
}

/// Everything one cell produced. Contains no timing, so reruns serialize
/// to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub protocol: Protocol,
    pub seeds: CellSeeds,
    pub targets: Vec<usize>,
    pub test_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub report: Option<MetricReport>,
    pub nodes: Vec<NodeMetrics>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Split and explained nodes of one iteration, shared by all its cells.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationPlan {
    pub iteration: usize,
    pub seed: u64,
    pub split_seed: u64,
    pub targets_seed: u64,
    pub masks: SplitMasks,
    pub targets: Vec<usize>,
}

/// Files of an experiment output directory.
#[derive(Clone, Debug)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.jsonl")
    }

    pub fn cell(&self, key: &CellKey) -> PathBuf {
        self.root.join("cells").join(format!("{}.json", key.slug()))
    }

    fn cell_timing(&self, key: &CellKey) -> PathBuf {
        self.root.join("cells").join(format!("{}.time", key.slug()))
    }

    pub fn checkpoint(&self, key: &CellKey) -> PathBuf {
        self.root.join("checkpoints").join(format!("{}.json", key.slug()))
    }

    pub fn mask(&self, key: &CellKey, node: usize, run: usize, perturbed: bool) -> PathBuf {
        let suffix = if perturbed { "_perturbed" } else { "" };
        self.root
            .join("masks")
            .join(key.slug())
            .join(format!("node{node}_run{run}{suffix}.json"))
    }

    fn prepare(&self) -> Result<()> {
        for sub in ["cells", "checkpoints", "masks", "charts"] {
            let dir = self.root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A configured grid over one loaded graph.
pub struct Experiment {
    cfg: ExperimentConfig,
    graph: Graph,
    dataset: String,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = cfg.dataset.load()?;
        let dataset = cfg.dataset.display_name();
        Self::with_graph(cfg, graph, dataset)
    }

    pub fn with_graph(cfg: ExperimentConfig, graph: Graph, dataset: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_against(&graph)?;
        Ok(Self {
            cfg,
            graph,
            dataset: dataset.into(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn protocol(&self) -> Protocol {
        let c = &self.cfg;
        Protocol {
            master_seed: c.seed,
            nodes_per_iteration: c.nodes_per_iteration,
            runs_per_node: c.runs_per_node,
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            train_fraction: c.train_fraction,
            feature_fraction: c.perturbation.feature_fraction,
            node_removal_fraction: c.perturbation.node_removal_fraction,
            zero_tol: c.metrics.zero_tol,
            fidelity_mode: c.metrics.fidelity,
            attack: c.attack.clone(),
        }
    }

    pub fn explainer(&self) -> Box<dyn Explainer> {
        match self.cfg.explainer {
            ExplainerId::GnnExplainer => Box::new(GnnExplainer::new(self.cfg.gnnexplainer.clone())),
            ExplainerId::SubgraphX => Box::new(SubgraphX::new(self.cfg.subgraphx.clone())),
        }
    }

    pub fn plan(&self, iteration: usize) -> Result<IterationPlan> {
        let it_seed = iteration_seed(self.cfg.seed, iteration);
        let split_seed = seed::derive_str(it_seed, "split");
        let targets_seed = seed::derive_str(it_seed, "targets");
        let masks = split(&self.graph, self.cfg.train_fraction, split_seed)?;
        let test = masks.test_nodes();
        let mut rng = seed::rng(targets_seed);
        let mut targets: Vec<usize> = test.choose_multiple(&mut rng, self.cfg.nodes_per_iteration).copied().collect();
        targets.sort_unstable();
        Ok(IterationPlan {
            iteration,
            seed: it_seed,
            split_seed,
            targets_seed,
            masks,
            targets,
        })
    }

    pub fn key(&self, iteration: usize, arch: Architecture, defense: DefenseId) -> CellKey {
        CellKey {
            dataset: self.dataset.clone(),
            architecture: arch,
            defense,
            explainer: self.cfg.explainer,
            iteration,
        }
    }

    /// Grid cells in output order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for it in 0..self.cfg.iterations {
            for &a in &self.cfg.architectures {
                for &d in &self.cfg.defenses {
                    out.push(self.key(it, a, d));
                }
            }
        }
        out
    }

    fn seeds(&self, plan: &IterationPlan, arch: Architecture) -> CellSeeds {
        CellSeeds {
            iteration: plan.seed,
            split: plan.split_seed,
            targets: plan.targets_seed,
            model: model_seed(plan.seed, arch.id()),
        }
    }

    fn trial(&self, plan: &IterationPlan, node: usize, run: usize) -> StabilityTrial {
        let rs = run_seed(plan.seed, node, run);
        StabilityTrial {
            perturbation: PerturbationSpec {
                feature_fraction: self.cfg.perturbation.feature_fraction,
                node_removal_fraction: self.cfg.perturbation.node_removal_fraction,
                seed: perturbation_seed(rs),
            },
            explain_seed: explain_seed(rs),
        }
    }

    /// Trains, explains and scores one cell. Failures are captured in the
    /// result instead of propagating.
    pub fn run_cell(&self, plan: &IterationPlan, key: &CellKey, layout: Option<&OutputLayout>) -> CellResult {
        let seeds = self.seeds(plan, key.architecture);
        let mut result = CellResult {
            key: key.clone(),
            protocol: self.protocol(),
            seeds,
            targets: plan.targets.clone(),
            test_accuracy: None,
            final_train_loss: None,
            report: None,
            nodes: Vec::new(),
            error: None,
        };
        if let Err(e) = self.fill_cell(plan, &mut result, layout) {
            log::warn!("cell {} failed: {e}", key.slug());
            result.error = Some(e.to_string());
            result.report = None;
            result.nodes.clear();
        }
        result
    }

    fn fill_cell(&self, plan: &IterationPlan, result: &mut CellResult, layout: Option<&OutputLayout>) -> Result<()> {
        let key = result.key.clone();
        if let Some(l) = layout {
            l.prepare()?;
        }
        let train_cfg = TrainConfig {
            epochs: self.cfg.epochs,
            lr: self.cfg.learning_rate,
            seed: seed::derive_str(result.seeds.model, "train"),
        };
        let dm = fit_defended(
            &self.graph,
            &plan.masks,
            key.architecture,
            key.defense,
            &self.cfg.defense,
            result.seeds.model,
            &train_cfg,
        )?;
        result.final_train_loss = dm.model.meta.final_train_loss;
        let prepared = dm.prepare(&self.graph)?;
        let logp = dm.model.predict(&prepared)?;
        result.test_accuracy = Some(accuracy(&logp, self.graph.labels(), &plan.masks.test_nodes()));
        if let Some(l) = layout.filter(|_| self.cfg.save_checkpoints) {
            save_checkpoint(&dm.model, l.checkpoint(&key))?;
        }
        let frozen = FrozenModel::new(&dm.model);
        let explainer = self.explainer();
        let prepare = |g: &Graph| dm.prepare(g);
        for &target in &plan.targets {
            let input = StabilityInput {
                model: &frozen,
                explainer: explainer.as_ref(),
                graph: &self.graph,
                prepare: &prepare,
                target,
            };
            let mut masks = Vec::with_capacity(self.cfg.runs_per_node);
            let mut perturbed = Vec::with_capacity(self.cfg.runs_per_node);
            for run in 0..self.cfg.runs_per_node {
                let trial = self.trial(plan, target, run);
                let mask = explainer.explain(&frozen, &prepared, target, trial.explain_seed, None)?;
                let (noisy, remap) = perturbed_explanation(&input, &trial)?;
                if let Some(l) = layout {
                    write_mask(&mask, &l.mask(&key, target, run, false), MaskEncoding::Sparse)?;
                    write_mask(&noisy, &l.mask(&key, target, run, true), MaskEncoding::Sparse)?;
                }
                masks.push(mask);
                perturbed.push((noisy, remap));
            }
            result
                .nodes
                .push(self.node_metrics(&frozen, &prepared, target, &masks, &perturbed)?);
        }
        result.report = Some(aggregate(&result.nodes, self.cfg.runs_per_node, self.cfg.metrics.fidelity)?);
        Ok(())
    }

    fn node_metrics(
        &self,
        model: &dyn NodeModel,
        prepared: &Graph,
        target: usize,
        masks: &[ExplanationMask],
        perturbed: &[(ExplanationMask, NodeRemap)],
    ) -> Result<NodeMetrics> {
        let runs = masks.len() as f64;
        let mut sparse = 0.0;
        for m in masks {
            sparse += sparsity(m, self.cfg.metrics.zero_tol)?;
        }
        let mut distance = 0.0;
        for (m, (p, remap)) in masks.iter().zip(perturbed) {
            distance += mask_distance(m, p, remap)?;
        }
        Ok(NodeMetrics {
            node: target,
            fidelity_agreement: fidelity(model, prepared, masks, FidelityMode::Agreement)?,
            fidelity_abs: fidelity(model, prepared, masks, FidelityMode::AbsoluteDifference)?,
            sparsity: sparse / runs,
            stability: distance / perturbed.len() as f64,
            consistency: consistency(masks)?,
        })
    }

    /// Runs the whole grid on `workers` threads. With `resume`, cells that
    /// already completed under `layout` are reloaded instead of recomputed.
    pub fn run(&self, layout: Option<&OutputLayout>, workers: usize, resume: bool) -> Result<Vec<CellResult>> {
        if let Some(l) = layout {
            l.prepare()?;
            write_atomic(&l.root.join("config.toml"), &self.cfg.to_toml_string()?)?;
        }
        let plans = (0..self.cfg.iterations).map(|i| self.plan(i)).collect::<Result<Vec<_>>>()?;
        let cells = self.cells();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let total = cells.len();
        let results: Vec<Result<CellResult>> = pool.install(|| {
            cells
                .par_iter()
                .map(|key| {
                    if let Some(prior) = layout.filter(|_| resume).and_then(|l| load_completed(l, key)) {
                        log::info!("resumed {}", key.slug());
                        return Ok(prior);
                    }
                    let start = Instant::now();
                    let cell = self.run_cell(&plans[key.iteration], key, layout);
                    let seconds = start.elapsed().as_secs_f64();
                    log::info!(
                        "cell {} of {total}: {} in {seconds:.1}s{}",
                        cells.iter().position(|k| k == key).map_or(0, |p| p + 1),
                        key.slug(),
                        cell.error.as_deref().map_or(String::new(), |e| format!(" (failed: {e})"))
                    );
                    if let Some(l) = layout {
                        write_atomic(&l.cell(key), &(serde_json::to_string(&cell)? + "\n"))?;
                        let timing = serde_json::json!({"cell": key.slug(), "seconds": seconds});
                        write_atomic(&l.cell_timing(key), &(timing.to_string() + "\n"))?;
                    }
                    Ok(cell)
                })
                .collect()
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        if let Some(l) = layout {
            let mut lines = String::new();
            let mut timings = String::new();
            for cell in &results {
                lines.push_str(&serde_json::to_string(cell)?);
                lines.push('\n');
                if let Ok(t) = fs::read_to_string(l.cell_timing(&cell.key)) {
                    timings.push_str(&t);
                }
            }
            write_atomic(&l.results(), &lines)?;
            write_atomic(&l.timings(), &timings)?;
            if results.iter().any(CellResult::is_ok) {
                report::write_summary(&results, &l.root)?;
            }
        }
        Ok(results)
    }

    /// Rebuilds a cell's metrics from its checkpoint and persisted masks.
    pub fn recompute(&self, layout: &OutputLayout, prior: &CellResult) -> Result<CellResult> {
        let key = &prior.key;
        if !prior.is_ok() {
            return Ok(prior.clone());
        }
        let model = load_checkpoint(layout.checkpoint(key))?;
        let prepared = prepare_graph(key.defense, &self.cfg.defense, &self.graph)?;
        let frozen = FrozenModel::new(&model);
        let plan = self.plan(key.iteration)?;
        if plan.targets != prior.targets {
            return Err(Error::Alignment(format!("{}: target nodes differ from the stored cell", key.slug())));
        }
        let mut nodes = Vec::with_capacity(plan.targets.len());
        for &target in &plan.targets {
            let mut masks = Vec::new();
            let mut perturbed = Vec::new();
            for run in 0..self.cfg.runs_per_node {
                let trial = self.trial(&plan, target, run);
                masks.push(read_mask(&layout.mask(key, target, run, false))?);
                let (_, remap) = perturb(&self.graph, &trial.perturbation, target)?;
                perturbed.push((read_mask(&layout.mask(key, target, run, true))?, remap));
            }
            nodes.push(self.node_metrics(&frozen, &prepared, target, &masks, &perturbed)?);
        }
        let mut out = prior.clone();
        out.report = Some(aggregate(&nodes, self.cfg.runs_per_node, self.cfg.metrics.fidelity)?);
        out.nodes = nodes;
        Ok(out)
    }
}

fn load_completed(layout: &OutputLayout, key: &CellKey) -> Option<CellResult> {
    let text = fs::read_to_string(layout.cell(key)).ok()?;
    let cell: CellResult = serde_json::from_str(&text).ok()?;
    (cell.is_ok() && &cell.key == key).then_some(cell)
}

/// Reads `results.jsonl`.
pub fn read_results(path: &Path) -> Result<Vec<CellResult>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
