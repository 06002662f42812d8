use std::rc::Rc;

use gnnbench_autodiff::{AdamConfig, AdamState, BatchStats, Matrix, Tape, Tensor};

use super::{Forward, Mode, Model, Propagation};
use crate::error::{Error, Result};
use crate::graph::{Graph, SplitMasks};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Root of the per-epoch noise seeds.
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            seed,
        }
    }
}

/// Base loss on the training rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// Mean negative log-likelihood of the true labels.
    Nll,
    /// Mean cross-entropy against soft labels, computed on the
    /// temperature-scaled output: `-Σ_c q_c log softmax(z / T)_c`.
    SoftTargets { probs: Matrix, temperature: f64 },
}

impl Objective {
    fn loss<'t>(&self, log_probs: Tensor<'t>, rows: &Rc<Vec<usize>>, targets: &Rc<Vec<usize>>) -> Result<Tensor<'t>> {
        match self {
            Objective::Nll => Ok(log_probs.nll_loss(rows.clone(), targets.clone())?),
            Objective::SoftTargets { probs, temperature } => {
                if !(*temperature > 0.0) {
                    return Err(Error::Parameter(format!("temperature must be positive, got {temperature}")));
                }
                // log_softmax is shift-invariant, so log-probabilities stand in for logits.
                let scaled = log_probs.scale(1.0 / temperature).log_softmax();
                let q = log_probs.tape().constant(probs.select_rows(rows));
                let ce = scaled.gather_rows(rows.clone())?.mul(q)?.sum();
                Ok(ce.scale(-1.0 / rows.len() as f64))
            }
        }
    }
}

/// Everything a loss hook may read during one epoch.
pub struct HookContext<'t, 'a> {
    pub tape: &'t Tape,
    pub params: &'a [Tensor<'t>],
    pub model: &'a Model,
    pub features: &'a Rc<Matrix>,
    pub prop: &'a Propagation,
    pub train_rows: &'a Rc<Vec<usize>>,
    pub targets: &'a Rc<Vec<usize>>,
    pub forward: &'a Forward<'t>,
    /// Gradient of the base loss with respect to the features, when a hook
    /// asked for it. Treated as a constant.
    pub input_grad: Option<&'a Matrix>,
    pub mode: Mode,
}

impl<'t> HookContext<'t, '_> {
    /// Log-probabilities of the model on replacement features.
    pub fn forward_on(&self, x: Matrix) -> Result<Tensor<'t>> {
        let x = self.tape.constant(x);
        Ok(self.model.forward(self.tape, self.params, x, self.prop, self.mode)?.log_probs)
    }
}

/// An additive term of the training loss.
pub trait TrainingHook: Send + Sync {
    fn name(&self) -> &str;

    fn needs_input_grad(&self) -> bool {
        false
    }

    fn loss<'t>(&self, ctx: &HookContext<'t, '_>) -> Result<Tensor<'t>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub base: f64,
    pub hooks: Vec<(String, f64)>,
    pub total: f64,
}

struct Setup {
    x: Rc<Matrix>,
    prop: Propagation,
    rows: Rc<Vec<usize>>,
    targets: Rc<Vec<usize>>,
}

fn setup(model: &Model, g: &Graph, masks: &SplitMasks) -> Result<Setup> {
    if g.num_features() != model.spec.input_size {
        return Err(Error::Validation(format!(
            "graph has {} features, model expects {}",
            g.num_features(),
            model.spec.input_size
        )));
    }
    if masks.train.len() != g.num_nodes() {
        return Err(Error::Validation("split masks do not match the graph".into()));
    }
    let rows = masks.train_nodes();
    if rows.is_empty() {
        return Err(Error::Validation("no training nodes".into()));
    }
    let targets = rows.iter().map(|&r| g.labels()[r]).collect();
    Ok(Setup {
        x: Rc::new(g.features().clone()),
        prop: Propagation::from_graph(g),
        rows: Rc::new(rows),
        targets: Rc::new(targets),
    })
}

fn input_gradient(model: &Model, s: &Setup, objective: &Objective, mode: Mode) -> Result<Matrix> {
    let tape = Tape::new();
    let params = model.constant_params(&tape);
    let x = tape.leaf_rc(s.x.clone(), true);
    let fwd = model.forward(&tape, &params, x, &s.prop, mode)?;
    let loss = objective.loss(fwd.log_probs, &s.rows, &s.targets)?;
    let mut grads = tape.backward(loss)?;
    Ok(grads.take(x))
}

struct Terms<'t> {
    base: Tensor<'t>,
    hooks: Vec<Tensor<'t>>,
    stats: Vec<BatchStats>,
}

fn assemble<'t>(
    tape: &'t Tape,
    params: &[Tensor<'t>],
    model: &Model,
    s: &Setup,
    hooks: &[&dyn TrainingHook],
    objective: &Objective,
    mode: Mode,
) -> Result<Terms<'t>> {
    let input_grad = if hooks.iter().any(|h| h.needs_input_grad()) {
        Some(input_gradient(model, s, objective, mode)?)
    } else {
        None
    };
    let x = tape.leaf_rc(s.x.clone(), false);
    let forward = model.forward(tape, params, x, &s.prop, mode)?;
    let base = objective.loss(forward.log_probs, &s.rows, &s.targets)?;
    let ctx = HookContext {
        tape,
        params,
        model,
        features: &s.x,
        prop: &s.prop,
        train_rows: &s.rows,
        targets: &s.targets,
        forward: &forward,
        input_grad: input_grad.as_ref(),
        mode,
    };
    let hook_terms = hooks.iter().map(|h| h.loss(&ctx)).collect::<Result<Vec<_>>>()?;
    Ok(Terms {
        base,
        hooks: hook_terms,
        stats: forward.stats,
    })
}

fn epoch_mode(cfg: &TrainConfig, epoch: usize) -> Mode {
    Mode::Train {
        noise_seed: seed::derive(cfg.seed, epoch as u64),
    }
}

/// Loss terms of one training epoch at the current parameters, without
/// updating anything.
pub fn loss_breakdown(
    model: &Model,
    g: &Graph,
    masks: &SplitMasks,
    hooks: &[&dyn TrainingHook],
    objective: &Objective,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    let s = setup(model, g, masks)?;
    let tape = Tape::new();
    let params = model.constant_params(&tape);
    let terms = assemble(&tape, &params, model, &s, hooks, objective, epoch_mode(cfg, epoch))?;
    let mut total = terms.base;
    for h in &terms.hooks {
        total = total.add(*h)?;
    }
    Ok(LossBreakdown {
        base: terms.base.item(),
        hooks: hooks.iter().zip(&terms.hooks).map(|(h, t)| (h.name().to_string(), t.item())).collect(),
        total: total.item(),
    })
}

/// Full-graph training on the NLL of the training labels plus hook terms.
pub fn train(model: Model, g: &Graph, masks: &SplitMasks, cfg: &TrainConfig, hooks: &[&dyn TrainingHook]) -> Result<Model> {
    train_with_objective(model, g, masks, cfg, hooks, &Objective::Nll)
}

/// Full-graph Adam training. Gating thresholds get their own optimizer and
/// are frozen after the gating warm-up.
pub fn train_with_objective(
    mut model: Model,
    g: &Graph,
    masks: &SplitMasks,
    cfg: &TrainConfig,
    hooks: &[&dyn TrainingHook],
    objective: &Objective,
) -> Result<Model> {
    if cfg.epochs == 0 {
        return Err(Error::Parameter("epochs must be at least 1".into()));
    }
    let s = setup(&model, g, masks)?;
    let guard_idx = model.guard_params.clone();
    let main_idx: Vec<usize> = (0..model.params.len()).filter(|i| !guard_idx.contains(i)).collect();
    let pick = |m: &Model, idx: &[usize]| idx.iter().map(|&i| m.params.values[i].clone()).collect::<Vec<_>>();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &pick(&model, &main_idx));
    let (guard_lr, guard_iters) = model.guard.as_ref().map_or((0.0, 0), |g| (g.lr, g.train_iters));
    let mut guard_adam = AdamState::new(AdamConfig::with_lr(guard_lr), &pick(&model, &guard_idx));
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let warm = epoch < guard_iters;
        let tape = Tape::new();
        let params: Vec<Tensor<'_>> = model
            .params
            .values
            .iter()
            .enumerate()
            .map(|(i, m)| tape.leaf(m.clone(), warm || !guard_idx.contains(&i)))
            .collect();
        let terms = assemble(&tape, &params, &model, &s, hooks, objective, epoch_mode(cfg, epoch))?;
        let mut total = terms.base;
        for h in &terms.hooks {
            total = total.add(*h)?;
        }
        let loss = total.item();
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        let mut grads = tape.backward(total)?;
        let step = |idx: &[usize], opt: &mut AdamState, model: &mut Model, grads: &mut gnnbench_autodiff::Gradients| -> Result<()> {
            let g: Vec<Matrix> = idx.iter().map(|&i| grads.take(params[i])).collect();
            let mut vals: Vec<Matrix> = idx
                .iter()
                .map(|&i| std::mem::replace(&mut model.params.values[i], Matrix::zeros(0, 0)))
                .collect();
            let res = opt.step(&mut vals, &g);
            for (&i, v) in idx.iter().zip(vals) {
                model.params.values[i] = v;
            }
            Ok(res?)
        };
        step(&main_idx, &mut adam, &mut model, &mut grads)?;
        if warm && !guard_idx.is_empty() {
            step(&guard_idx, &mut guard_adam, &mut model, &mut grads)?;
        }
        if !terms.stats.is_empty() {
            model.bn_stats = terms.stats;
        }
        curve.push(loss);
    }
    model.meta.epochs = cfg.epochs;
    model.meta.final_train_loss = curve.last().copied();
    model.meta.loss_curve = curve;
    Ok(model)
}

/// Share of `nodes` whose arg-max prediction equals their label.
pub fn accuracy(log_probs: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let pred = log_probs.argmax_rows();
    nodes.iter().filter(|&&u| pred[u] == labels[u]).count() as f64 / nodes.len() as f64
}
