//! The six node-classification architectures and their training.
//!
//! A [`Model`] is a flat list of named parameters plus a layer program that
//! indexes into it. The layer program is a pure function of the
//! [`ModelSpec`] and the optional gating/denoising wrappers, so checkpoints
//! store only the spec, the parameters and the batch-norm statistics.

mod checkpoint;
mod forward;
mod propagation;
mod train;

use std::fmt;
use std::str::FromStr;

use gnnbench_autodiff::{BatchStats, Matrix};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{Forward, Mode};
pub use propagation::Propagation;
pub use train::{
    accuracy, loss_breakdown, train, train_with_objective, HookContext, LossBreakdown, Objective, TrainConfig,
    TrainingHook,
};

pub const HIDDEN: usize = 16;
pub const GAT_HEADS: usize = 3;
pub const BN_EPS: f64 = 1e-5;
pub const GAT_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "gcn-2l")]
    Gcn2,
    #[serde(rename = "gcn-3l")]
    Gcn3,
    #[serde(rename = "sage-2l")]
    Sage2,
    #[serde(rename = "sage-3l")]
    Sage3,
    #[serde(rename = "gin-2l")]
    Gin2,
    #[serde(rename = "gat-2l")]
    Gat2,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Gcn2,
        Architecture::Gcn3,
        Architecture::Sage2,
        Architecture::Sage3,
        Architecture::Gin2,
        Architecture::Gat2,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Gcn2 => "gcn-2l",
            Self::Gcn3 => "gcn-3l",
            Self::Sage2 => "sage-2l",
            Self::Sage3 => "sage-3l",
            Self::Gin2 => "gin-2l",
            Self::Gat2 => "gat-2l",
        }
    }

    /// Number of message-passing layers, i.e. the receptive-field radius.
    pub fn hops(self) -> usize {
        match self {
            Self::Gcn3 | Self::Sage3 => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown architecture {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub input_size: usize,
    pub output_size: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_heads")]
    pub gat_heads: usize,
}

fn default_hidden() -> usize {
    HIDDEN
}

fn default_heads() -> usize {
    GAT_HEADS
}

impl ModelSpec {
    pub fn new(arch: Architecture, input_size: usize, output_size: usize) -> Self {
        Self {
            arch,
            input_size,
            output_size,
            hidden: HIDDEN,
            gat_heads: GAT_HEADS,
        }
    }
}

/// Edge gating by embedding similarity with a learnable pruning threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardSettings {
    pub attention: bool,
    pub drop: bool,
    pub lr: f64,
    pub train_iters: usize,
    pub initial_threshold: f64,
}

impl Default for GuardSettings {
    fn default() -> Self {
        Self {
            attention: true,
            drop: true,
            lr: 0.01,
            train_iters: 50,
            initial_threshold: 0.1,
        }
    }
}

/// Row-wise denoising autoencoder placed in front of the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSettings {
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub noise_std: f64,
}

impl Default for AutoencoderSettings {
    fn default() -> Self {
        Self {
            hidden_dim: 7,
            bottleneck_dim: 5,
            noise_std: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    fn push(&mut self, name: String, value: Matrix) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }
}

#[derive(Clone, Debug)]
pub(crate) struct GatHead {
    pub w: usize,
    pub att_src: usize,
    pub att_dst: usize,
}

#[derive(Clone, Debug)]
pub(crate) enum Layer {
    Gcn { w: usize, b: usize, guard: Option<usize> },
    Sage { w_neigh: usize, w_root: usize, b: usize, guard: Option<usize> },
    Gat { heads: Vec<GatHead>, b: usize, guard: Option<usize> },
    /// First linear map applied before the sum aggregation, then `mlp`.
    Gin { w: usize, b: usize, mlp: Vec<Layer>, guard: Option<usize> },
    Linear { w: usize, b: usize },
    BatchNorm { gamma: usize, beta: usize, slot: usize },
    Relu,
    LogSoftmax,
}

/// Training provenance carried with a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_train_loss: Option<f64>,
    pub seed: u64,
    pub defense: String,
    pub loss_curve: Vec<f64>,
}

/// A classifier `f`, possibly wrapped by edge gating or a denoiser.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Params,
    pub guard: Option<GuardSettings>,
    pub autoencoder: Option<AutoencoderSettings>,
    pub meta: TrainingMeta,
    pub(crate) bn_stats: Vec<BatchStats>,
    pub(crate) layers: Vec<Layer>,
    pub(crate) ae_layers: Vec<Layer>,
    pub(crate) guard_params: Vec<usize>,
}

struct Builder<'a, R: Rng> {
    params: Params,
    rng: &'a mut R,
    bn_widths: Vec<usize>,
    guard: bool,
    guard_init: f64,
    guard_params: Vec<usize>,
}

impl<R: Rng> Builder<'_, R> {
    fn glorot(&mut self, name: String, rows: usize, cols: usize, fan: (usize, usize)) -> usize {
        let a = (6.0 / (fan.0 + fan.1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-a..=a)).collect();
        self.params.push(name, Matrix::from_vec(rows, cols, data).expect("sized"))
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.glorot(name, rows, cols, (rows, cols))
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.params.push(name, Matrix::zeros(rows, cols))
    }

    fn guard_param(&mut self, layer: usize) -> Option<usize> {
        if !self.guard {
            return None;
        }
        let p = self.guard_init;
        let logit = (p / (1.0 - p)).ln();
        let idx = self.params.push(format!("guard.{layer}.threshold_logit"), Matrix::scalar(logit));
        self.guard_params.push(idx);
        Some(idx)
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize) -> Layer {
        let w = self.weight(format!("{prefix}.weight"), i, o);
        let b = self.zeros(format!("{prefix}.bias"), 1, o);
        Layer::Linear { w, b }
    }

    fn batch_norm(&mut self, prefix: &str, width: usize) -> Layer {
        let gamma = self.params.push(format!("{prefix}.gamma"), Matrix::filled(1, width, 1.0));
        let beta = self.zeros(format!("{prefix}.beta"), 1, width);
        self.bn_widths.push(width);
        Layer::BatchNorm {
            gamma,
            beta,
            slot: self.bn_widths.len() - 1,
        }
    }

    fn gcn(&mut self, k: usize, i: usize, o: usize) -> Layer {
        let w = self.weight(format!("conv{k}.weight"), i, o);
        let b = self.zeros(format!("conv{k}.bias"), 1, o);
        let guard = self.guard_param(k);
        Layer::Gcn { w, b, guard }
    }

    fn sage(&mut self, k: usize, i: usize, o: usize) -> Layer {
        let w_neigh = self.weight(format!("conv{k}.lin_neigh.weight"), i, o);
        let b = self.zeros(format!("conv{k}.lin_neigh.bias"), 1, o);
        let w_root = self.weight(format!("conv{k}.lin_root.weight"), i, o);
        let guard = self.guard_param(k);
        Layer::Sage { w_neigh, w_root, b, guard }
    }

    fn gat(&mut self, k: usize, i: usize, o: usize, heads: usize) -> Layer {
        let heads = (0..heads)
            .map(|h| GatHead {
                w: self.glorot(format!("conv{k}.head{h}.weight"), i, o, (i, heads * o)),
                att_src: self.glorot(format!("conv{k}.head{h}.att_src"), o, 1, (heads, o)),
                att_dst: self.glorot(format!("conv{k}.head{h}.att_dst"), o, 1, (heads, o)),
            })
            .collect::<Vec<_>>();
        let b = self.zeros(format!("conv{k}.bias"), 1, heads.len() * o);
        let guard = self.guard_param(k);
        Layer::Gat { heads, b, guard }
    }

    fn gin(&mut self, k: usize, widths: &[usize], inner_relu_last: bool) -> Layer {
        let p = format!("conv{k}.mlp");
        let w = self.weight(format!("{p}.0.weight"), widths[0], widths[1]);
        let b = self.zeros(format!("{p}.0.bias"), 1, widths[1]);
        let mut mlp = vec![self.batch_norm(&format!("{p}.1"), widths[1]), Layer::Relu];
        mlp.push(self.linear(&format!("{p}.3"), widths[1], widths[2]));
        if inner_relu_last {
            mlp.push(self.batch_norm(&format!("{p}.4"), widths[2]));
            mlp.push(Layer::Relu);
        }
        let guard = self.guard_param(k);
        Layer::Gin { w, b, mlp, guard }
    }
}

fn build_layers<R: Rng>(b: &mut Builder<'_, R>, spec: &ModelSpec) -> Vec<Layer> {
    let (i, h, o) = (spec.input_size, spec.hidden, spec.output_size);
    use Layer::{LogSoftmax, Relu};
    match spec.arch {
        Architecture::Gcn2 => vec![b.gcn(0, i, h), Relu, b.gcn(1, h, o), LogSoftmax],
        Architecture::Gcn3 => vec![
            b.gcn(0, i, h),
            Relu,
            b.gcn(1, h, h),
            Relu,
            b.gcn(2, h, o),
            LogSoftmax,
        ],
        Architecture::Sage2 => {
            let c0 = b.sage(0, i, h);
            let bn = b.batch_norm("bn0", h);
            vec![c0, bn, Relu, b.sage(1, h, o), LogSoftmax]
        }
        Architecture::Sage3 => {
            let c0 = b.sage(0, i, h);
            let bn0 = b.batch_norm("bn0", h);
            let c1 = b.sage(1, h, h);
            let bn1 = b.batch_norm("bn1", h);
            vec![c0, bn0, Relu, c1, bn1, Relu, b.sage(2, h, o), LogSoftmax]
        }
        Architecture::Gin2 => {
            let c0 = b.gin(0, &[i, h, h], true);
            let c1 = b.gin(1, &[h, h, o], false);
            vec![c0, Relu, c1, LogSoftmax]
        }
        Architecture::Gat2 => {
            let heads = spec.gat_heads;
            let c0 = b.gat(0, i, h, heads);
            let bn = b.batch_norm("bn0", heads * h);
            vec![c0, bn, Relu, b.gat(1, heads * h, o, 1), LogSoftmax]
        }
    }
}

impl Model {
    /// Freshly initialized model; weights are Glorot-uniform, biases zero.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::build_wrapped(spec, seed, None, None)
    }

    /// Like [`Model::build`], optionally with edge gating in every
    /// message-passing layer and a denoising autoencoder on the input.
    pub fn build_wrapped(
        spec: ModelSpec,
        seed: u64,
        guard: Option<GuardSettings>,
        autoencoder: Option<AutoencoderSettings>,
    ) -> Result<Self> {
        if spec.input_size == 0 || spec.output_size == 0 || spec.hidden == 0 || spec.gat_heads == 0 {
            return Err(Error::Parameter(format!("degenerate model spec {spec:?}")));
        }
        let guard = guard.filter(|g| g.attention);
        if let Some(g) = &guard {
            if !(g.initial_threshold > 0.0 && g.initial_threshold < 1.0) {
                return Err(Error::Config("guard threshold must lie in (0, 1)".into()));
            }
        }
        if let Some(ae) = &autoencoder {
            if ae.bottleneck_dim >= spec.input_size || ae.hidden_dim == 0 || ae.bottleneck_dim == 0 {
                return Err(Error::Config(format!(
                    "autoencoder bottleneck {} must be positive and narrower than the input width {}",
                    ae.bottleneck_dim, spec.input_size
                )));
            }
        }
        let mut rng = seed::rng(seed);
        let mut b = Builder {
            params: Params {
                names: Vec::new(),
                values: Vec::new(),
            },
            rng: &mut rng,
            bn_widths: Vec::new(),
            guard: guard.is_some(),
            guard_init: guard.as_ref().map_or(0.1, |g| g.initial_threshold),
            guard_params: Vec::new(),
        };
        let layers = build_layers(&mut b, &spec);
        let ae_layers = match &autoencoder {
            Some(ae) => {
                let widths = [spec.input_size, ae.hidden_dim, ae.bottleneck_dim, ae.hidden_dim, spec.input_size];
                let mut out = Vec::new();
                for k in 0..4 {
                    out.push(b.linear(&format!("ae.{k}"), widths[k], widths[k + 1]));
                    if k < 3 {
                        out.push(Layer::Relu);
                    }
                }
                out
            }
            None => Vec::new(),
        };
        let bn_stats = b
            .bn_widths
            .iter()
            .map(|&w| BatchStats {
                mean: vec![0.0; w],
                var: vec![1.0; w],
            })
            .collect();
        let (params, guard_params) = (b.params, b.guard_params);
        Ok(Self {
            spec,
            params,
            guard,
            autoencoder,
            meta: TrainingMeta {
                seed,
                defense: "none".into(),
                ..TrainingMeta::default()
            },
            bn_stats,
            layers,
            ae_layers,
            guard_params,
        })
    }

    pub fn hops(&self) -> usize {
        self.spec.arch.hops()
    }

    /// Human-readable layer stack of the classifier.
    pub fn layer_listing(&self) -> Vec<String> {
        self.layers.iter().map(|l| self.describe(l)).collect()
    }

    fn describe(&self, layer: &Layer) -> String {
        let shape = |i: usize| self.params.values[i].shape();
        match layer {
            Layer::Gcn { w, .. } => format!("GCNConv({}, {})", shape(*w).0, shape(*w).1),
            Layer::Sage { w_root, .. } => format!("SAGEConv({}, {})", shape(*w_root).0, shape(*w_root).1),
            Layer::Gat { heads, .. } => {
                let (i, o) = shape(heads[0].w);
                format!("GATConv({i}, {o}, heads={})", heads.len())
            }
            Layer::Gin { w, mlp, .. } => {
                let (i, o) = shape(*w);
                let mut parts = vec![format!("Linear({i}, {o})")];
                parts.extend(mlp.iter().map(|l| self.describe(l)));
                format!("GINConv({})", parts.join(", "))
            }
            Layer::Linear { w, .. } => format!("Linear({}, {})", shape(*w).0, shape(*w).1),
            Layer::BatchNorm { gamma, .. } => format!("BatchNorm1d({}, eps=1e-05)", shape(*gamma).1),
            Layer::Relu => "ReLU".into(),
            Layer::LogSoftmax => "LogSoftmax".into(),
        }
    }

    /// Indices of parameters trained only during the gating warm-up.
    pub fn guard_param_indices(&self) -> &[usize] {
        &self.guard_params
    }

    pub fn batch_stats(&self) -> &[BatchStats] {
        &self.bn_stats
    }
}
