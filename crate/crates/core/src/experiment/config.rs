use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::defense::{DefenseId, DefenseParams};
use crate::error::{Error, Result};
use crate::explain::{GnnExplainerConfig, SubgraphXConfig};
use crate::graph::{load_graph_bundle, Graph, SyntheticSpec};
use crate::metrics::{FidelityMode, DEFAULT_ZERO_TOL};
use crate::models::Architecture;

/// Graphs larger than this need `allow_subgraphx_large` to run SubgraphX.
pub const SUBGRAPHX_NODE_LIMIT: usize = 3000;

/// Attacks the schema accepts. Only in-training FGSM is modelled.
pub const ATTACKS: [&str; 2] = ["none", "fgsm-in-training"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerId {
    #[serde(rename = "gnnexplainer")]
    GnnExplainer,
    #[serde(rename = "subgraphx")]
    SubgraphX,
}

impl ExplainerId {
    pub fn id(self) -> &'static str {
        match self {
            ExplainerId::GnnExplainer => "gnnexplainer",
            ExplainerId::SubgraphX => "subgraphx",
        }
    }
}

/// Either a bundle directory or a generated graph; exactly one is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: Option<String>,
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetRef {
    pub fn bundle(path: impl Into<PathBuf>) -> Self {
        Self {
            name: None,
            path: Some(path.into()),
            synthetic: None,
        }
    }

    pub fn synthetic(spec: SyntheticSpec) -> Self {
        Self {
            name: None,
            path: None,
            synthetic: Some(spec),
        }
    }

    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (&self.path, &self.synthetic) {
            (Some(p), _) => p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned()),
            (None, Some(s)) => format!("synthetic-{}", s.num_nodes),
            (None, None) => "unnamed".into(),
        }
    }

    fn check(&self) -> Result<()> {
        match (&self.path, &self.synthetic) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(Error::Config("dataset needs exactly one of `path` or `synthetic`".into())),
        }
    }

    pub fn load(&self) -> Result<Graph> {
        self.check()?;
        match (&self.path, &self.synthetic) {
            (Some(p), _) => load_graph_bundle(p),
            (_, Some(s)) => s.generate(),
            _ => unreachable!("checked above"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub fidelity: FidelityMode,
    pub zero_tol: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            fidelity: FidelityMode::Agreement,
            zero_tol: DEFAULT_ZERO_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationOptions {
    pub feature_fraction: f64,
    pub node_removal_fraction: f64,
}

impl Default for PerturbationOptions {
    fn default() -> Self {
        Self {
            feature_fraction: 0.05,
            node_removal_fraction: 0.05,
        }
    }
}

/// One experiment grid. Relative dataset paths in a file resolve against
/// the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    #[serde(default = "all_architectures")]
    pub architectures: Vec<Architecture>,
    #[serde(default = "all_defenses")]
    pub defenses: Vec<DefenseId>,
    #[serde(default = "default_explainer")]
    pub explainer: ExplainerId,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_nodes")]
    pub nodes_per_iteration: usize,
    #[serde(default = "default_runs")]
    pub runs_per_node: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_attack")]
    pub attack: String,
    #[serde(default)]
    pub allow_subgraphx_large: bool,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub perturbation: PerturbationOptions,
    #[serde(default)]
    pub defense: DefenseParams,
    #[serde(default)]
    pub gnnexplainer: GnnExplainerConfig,
    #[serde(default)]
    pub subgraphx: SubgraphXConfig,
}

fn all_architectures() -> Vec<Architecture> {
    Architecture::ALL.to_vec()
}

fn all_defenses() -> Vec<DefenseId> {
    DefenseId::ALL.to_vec()
}

fn default_explainer() -> ExplainerId {
    ExplainerId::GnnExplainer
}

fn default_iterations() -> usize {
    5
}

fn default_nodes() -> usize {
    10
}

fn default_runs() -> usize {
    5
}

fn default_epochs() -> usize {
    200
}

fn default_lr() -> f64 {
    1e-3
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_attack() -> String {
    "none".into()
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetRef) -> Self {
        Self {
            dataset,
            architectures: all_architectures(),
            defenses: all_defenses(),
            explainer: default_explainer(),
            iterations: default_iterations(),
            nodes_per_iteration: default_nodes(),
            runs_per_node: default_runs(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            train_fraction: default_train_fraction(),
            seed: 0,
            attack: default_attack(),
            allow_subgraphx_large: false,
            save_checkpoints: true,
            output: None,
            workers: None,
            metrics: MetricOptions::default(),
            perturbation: PerturbationOptions::default(),
            defense: DefenseParams::default(),
            gnnexplainer: GnnExplainerConfig::default(),
            subgraphx: SubgraphXConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.dataset.path.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.output.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Checks everything that does not need the graph.
    pub fn validate(&self) -> Result<()> {
        self.dataset.check()?;
        let positive = [
            ("iterations", self.iterations),
            ("nodes_per_iteration", self.nodes_per_iteration),
            ("epochs", self.epochs),
            ("architectures", self.architectures.len()),
            ("defenses", self.defenses.len()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.runs_per_node < 2 {
            return Err(Error::Config("runs_per_node must be at least 2 for consistency".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        let p = &self.perturbation;
        for (name, v) in [("feature_fraction", p.feature_fraction), ("node_removal_fraction", p.node_removal_fraction)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("perturbation.{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.metrics.zero_tol >= 0.0) {
            return Err(Error::Config("metrics.zero_tol must be non-negative".into()));
        }
        if !ATTACKS.contains(&self.attack.as_str()) {
            return Err(Error::Config(format!(
                "unknown attack {:?}; expected one of {}",
                self.attack,
                ATTACKS.join(", ")
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &self.defenses {
            if !seen.insert(d) {
                return Err(Error::Config(format!("defense {d} listed twice")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.architectures {
            if !seen.insert(a) {
                return Err(Error::Config(format!("architecture {a} listed twice")));
            }
        }
        self.defense.validate()?;
        if self.explainer == ExplainerId::SubgraphX {
            let c = &self.subgraphx;
            if c.reward_method != "mc_l_shapley" || c.subgraph_building != "zero_filling" {
                return Err(Error::Config(
                    "subgraphx supports only reward_method = \"mc_l_shapley\" with subgraph_building = \"zero_filling\"".into(),
                ));
            }
        }
        Ok(())
    }

    /// Checks the constraints that depend on the loaded graph.
    pub fn validate_against(&self, g: &Graph) -> Result<()> {
        let test_size = g.num_nodes() - (self.train_fraction * g.num_nodes() as f64).round() as usize;
        if self.nodes_per_iteration > test_size {
            return Err(Error::Config(format!(
                "nodes_per_iteration {} exceeds the {test_size}-node test split",
                self.nodes_per_iteration
            )));
        }
        if self.explainer == ExplainerId::SubgraphX && g.num_nodes() > SUBGRAPHX_NODE_LIMIT && !self.allow_subgraphx_large {
            return Err(Error::Config(format!(
                "subgraphx on a {}-node graph is expensive; set allow_subgraphx_large = true to proceed",
                g.num_nodes()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_protocol_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[dataset]\npath = \"data/cora\"\n").unwrap();
        assert_eq!((cfg.iterations, cfg.nodes_per_iteration, cfg.runs_per_node, cfg.epochs), (5, 10, 5, 200));
        assert_eq!(cfg.defenses.len(), 8);
        assert_eq!(cfg.architectures.len(), 6);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_defense_is_named() {
        let err = ExperimentConfig::from_toml_str("defenses = [\"jaccard\", \"moat\"]\n[dataset]\npath = \"x\"\n").unwrap_err();
        assert!(err.to_string().contains("moat"), "{err}");
    }

    #[test]
    fn unknown_attack_and_keys_are_rejected() {
        let cfg = ExperimentConfig::from_toml_str("attack = \"nettack\"\n[dataset]\npath = \"x\"\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("nettack"));
        assert!(ExperimentConfig::from_toml_str("epoch = 3\n[dataset]\npath = \"x\"\n").is_err());
    }

    #[test]
    fn dataset_needs_exactly_one_source() {
        let cfg = ExperimentConfig::from_toml_str("[dataset]\nname = \"x\"\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::new(DatasetRef::synthetic(SyntheticSpec::new(40, 2, 8, 0.9, 3)));
        cfg.architectures = vec![Architecture::Gcn2];
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
