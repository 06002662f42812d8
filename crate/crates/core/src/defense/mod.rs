//! Robustness defenses applied before training (graph pre-transforms) or
//! during training (loss terms and model wrappers).

mod hooks;
mod jaccard;
mod quantize;

use std::fmt;
use std::str::FromStr;

use gnnbench_autodiff::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, SplitMasks};
use crate::models::{
    train, train_with_objective, Architecture, AutoencoderSettings, GuardSettings, Model, ModelSpec, Objective,
    TrainConfig, TrainingHook,
};
use crate::seed;

pub use hooks::{fgsm, AdvTrainingHook, GradRegHook, ReconstructionHook};
pub use jaccard::{jaccard_defense, jaccard_index};
pub use quantize::quantize_features;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseId {
    None,
    Jaccard,
    #[serde(rename = "gnnguard")]
    GnnGuard,
    GradReg,
    Distillation,
    AdvTraining,
    Quantization,
    Autoencoder,
}

/// When a defense acts relative to training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    None,
    Poison,
    Evasion,
}

impl DefenseId {
    pub const ALL: [DefenseId; 8] = [
        DefenseId::AdvTraining,
        DefenseId::Autoencoder,
        DefenseId::Distillation,
        DefenseId::GnnGuard,
        DefenseId::GradReg,
        DefenseId::Jaccard,
        DefenseId::Quantization,
        DefenseId::None,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Jaccard => "jaccard",
            Self::GnnGuard => "gnnguard",
            Self::GradReg => "grad-reg",
            Self::Distillation => "distillation",
            Self::AdvTraining => "adv-training",
            Self::Quantization => "quantization",
            Self::Autoencoder => "autoencoder",
        }
    }

    /// Column heading used in summary tables.
    pub fn abbreviation(self) -> &'static str {
        match self {
            Self::None => "Unprotected",
            Self::Jaccard => "JD",
            Self::GnnGuard => "GG",
            Self::GradReg => "GR",
            Self::Distillation => "DD",
            Self::AdvTraining => "AT",
            Self::Quantization => "DQD",
            Self::Autoencoder => "AE",
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            Self::None => Stage::None,
            Self::Jaccard | Self::GnnGuard => Stage::Poison,
            _ => Stage::Evasion,
        }
    }
}

impl fmt::Display for DefenseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for DefenseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.id() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown defense {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JaccardParams {
    pub threshold: f64,
}

impl Default for JaccardParams {
    fn default() -> Self {
        Self { threshold: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradRegParams {
    pub lambda: f64,
    pub h: f64,
}

impl Default for GradRegParams {
    fn default() -> Self {
        Self { lambda: 50.0, h: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillationParams {
    pub temperature: f64,
}

impl Default for DistillationParams {
    fn default() -> Self {
        Self { temperature: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvTrainingParams {
    pub attack: String,
    pub epsilon: f64,
    pub lambda_adv: f64,
}

impl Default for AdvTrainingParams {
    fn default() -> Self {
        Self {
            attack: "fgsm".into(),
            epsilon: 0.01,
            lambda_adv: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizationParams {
    pub num_levels: usize,
}

impl Default for QuantizationParams {
    fn default() -> Self {
        Self { num_levels: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderParams {
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub reconstruction_loss_weight: f64,
    pub noise_std: f64,
}

impl Default for AutoencoderParams {
    fn default() -> Self {
        Self {
            hidden_dim: 7,
            bottleneck_dim: 5,
            reconstruction_loss_weight: 0.1,
            noise_std: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnGuardParams {
    pub lr: f64,
    pub attention: bool,
    pub drop: bool,
    pub train_iters: usize,
    pub initial_threshold: f64,
}

impl Default for GnnGuardParams {
    fn default() -> Self {
        let g = GuardSettings::default();
        Self {
            lr: g.lr,
            attention: g.attention,
            drop: g.drop,
            train_iters: g.train_iters,
            initial_threshold: g.initial_threshold,
        }
    }
}

/// Hyperparameters of every defense.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseParams {
    pub jaccard: JaccardParams,
    pub gnnguard: GnnGuardParams,
    pub grad_reg: GradRegParams,
    pub distillation: DistillationParams,
    pub adv_training: AdvTrainingParams,
    pub quantization: QuantizationParams,
    pub autoencoder: AutoencoderParams,
}

impl DefenseParams {
    pub fn validate(&self) -> Result<()> {
        if self.adv_training.attack != "fgsm" {
            return Err(Error::Config(format!(
                "adversarial training supports only the fgsm attack, got {:?}",
                self.adv_training.attack
            )));
        }
        if !(self.distillation.temperature > 0.0) {
            return Err(Error::Config("distillation temperature must be positive".into()));
        }
        if self.quantization.num_levels < 2 {
            return Err(Error::Config("quantization needs at least 2 levels".into()));
        }
        if !(self.grad_reg.h > 0.0) {
            return Err(Error::Config("grad-reg step h must be positive".into()));
        }
        Ok(())
    }
}

/// Temperature softmax of each row of `logits`.
pub fn soft_labels(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
    }
    Ok(logits.softmax_rows(temperature))
}

/// Trains a fresh student of the teacher's architecture on the teacher's
/// temperature-`T` soft labels.
pub fn distillation_defense(
    teacher: &Model,
    g: &Graph,
    masks: &SplitMasks,
    temperature: f64,
    cfg: &TrainConfig,
    student_seed: u64,
) -> Result<Model> {
    let probs = soft_labels(&teacher.predict(g)?, temperature)?;
    let student = Model::build(teacher.spec.clone(), student_seed)?;
    train_with_objective(
        student,
        g,
        masks,
        cfg,
        &[],
        &Objective::SoftTargets { probs, temperature },
    )
}

/// A trained model together with the graph transform it expects.
#[derive(Clone, Debug)]
pub struct DefendedModel {
    pub defense: DefenseId,
    pub model: Model,
    pub params: DefenseParams,
    /// Loss curve of the distillation teacher, when there is one.
    pub teacher_curve: Option<Vec<f64>>,
}

impl DefendedModel {
    /// The graph the model consumes when fed `g`.
    pub fn prepare(&self, g: &Graph) -> Result<Graph> {
        prepare_graph(self.defense, &self.params, g)
    }
}

/// Pre-transform of a defense: edge pruning or feature quantization, else
/// a copy.
pub fn prepare_graph(defense: DefenseId, params: &DefenseParams, g: &Graph) -> Result<Graph> {
    match defense {
        DefenseId::Jaccard => jaccard_defense(g, params.jaccard.threshold),
        DefenseId::Quantization => g.with_features(quantize_features(g.features(), params.quantization.num_levels)?),
        _ => Ok(g.clone()),
    }
}

/// Builds, defends and trains one model. `model_seed` fixes the initial
/// weights; defenses that share it start from identical parameters.
pub fn fit_defended(
    g: &Graph,
    masks: &SplitMasks,
    arch: Architecture,
    defense: DefenseId,
    params: &DefenseParams,
    model_seed: u64,
    cfg: &TrainConfig,
) -> Result<DefendedModel> {
    params.validate()?;
    let spec = ModelSpec::new(arch, g.num_features(), g.num_classes());
    let train_graph = prepare_graph(defense, params, g)?;
    let mut teacher_curve = None;
    let model = match defense {
        DefenseId::None | DefenseId::Jaccard | DefenseId::Quantization => {
            train(Model::build(spec, model_seed)?, &train_graph, masks, cfg, &[])?
        }
        DefenseId::GnnGuard => {
            let p = &params.gnnguard;
            let settings = GuardSettings {
                attention: p.attention,
                drop: p.drop,
                lr: p.lr,
                train_iters: p.train_iters,
                initial_threshold: p.initial_threshold,
            };
            let model = Model::build_wrapped(spec, model_seed, Some(settings), None)?;
            train(model, &train_graph, masks, cfg, &[])?
        }
        DefenseId::GradReg => {
            let hook = GradRegHook {
                lambda: params.grad_reg.lambda,
                h: params.grad_reg.h,
            };
            train(Model::build(spec, model_seed)?, &train_graph, masks, cfg, &[&hook as &dyn TrainingHook])?
        }
        DefenseId::AdvTraining => {
            let hook = AdvTrainingHook {
                epsilon: params.adv_training.epsilon,
                lambda_adv: params.adv_training.lambda_adv,
            };
            train(Model::build(spec, model_seed)?, &train_graph, masks, cfg, &[&hook as &dyn TrainingHook])?
        }
        DefenseId::Autoencoder => {
            let p = &params.autoencoder;
            let settings = AutoencoderSettings {
                hidden_dim: p.hidden_dim,
                bottleneck_dim: p.bottleneck_dim,
                noise_std: p.noise_std,
            };
            let model = Model::build_wrapped(spec, model_seed, None, Some(settings))?;
            let hook = ReconstructionHook {
                weight: p.reconstruction_loss_weight,
            };
            train(model, &train_graph, masks, cfg, &[&hook as &dyn TrainingHook])?
        }
        DefenseId::Distillation => {
            let teacher = train(Model::build(spec, model_seed)?, &train_graph, masks, cfg, &[])?;
            teacher_curve = Some(teacher.meta.loss_curve.clone());
            distillation_defense(
                &teacher,
                &train_graph,
                masks,
                params.distillation.temperature,
                cfg,
                seed::derive_str(model_seed, "student"),
            )?
        }
    };
    let mut model = model;
    model.meta.defense = defense.id().to_string();
    Ok(DefendedModel {
        defense,
        model,
        params: params.clone(),
        teacher_curve,
    })
}
