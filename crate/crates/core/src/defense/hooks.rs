use gnnbench_autodiff::{Matrix, Tensor};

use crate::error::{Error, Result};
use crate::models::{HookContext, TrainingHook};

/// `λ/(h²n) ‖f(z) − f(x)‖²` over the training rows, with
/// `z = x + h ∇l/‖∇l‖` and the gradient held constant.
#[derive(Clone, Debug, PartialEq)]
pub struct GradRegHook {
    pub lambda: f64,
    pub h: f64,
}

impl TrainingHook for GradRegHook {
    fn name(&self) -> &str {
        "grad-reg"
    }

    fn needs_input_grad(&self) -> bool {
        true
    }

    fn loss<'t>(&self, ctx: &HookContext<'t, '_>) -> Result<Tensor<'t>> {
        let grad = ctx.input_grad.ok_or_else(|| Error::Config("grad-reg needs the input gradient".into()))?;
        let norm = grad.norm_l2();
        if norm == 0.0 {
            return Ok(ctx.tape.constant(Matrix::scalar(0.0)));
        }
        let z = ctx.features.zip_map(grad, |x, g| x + self.h * g / norm);
        let fz = ctx.forward_on(z)?.gather_rows(ctx.train_rows.clone())?;
        let fx = ctx.forward.log_probs.gather_rows(ctx.train_rows.clone())?;
        let n = ctx.train_rows.len() as f64;
        Ok(fz.sub(fx)?.l2_norm_sq().scale(self.lambda / (self.h * self.h * n)))
    }
}

/// FGSM step inside training: `λ_adv · l(f(x + ε sign ∇l), y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvTrainingHook {
    pub epsilon: f64,
    pub lambda_adv: f64,
}

/// `x + ε sign(g)`, with `sign(0) = 0`.
pub fn fgsm(x: &Matrix, grad: &Matrix, epsilon: f64) -> Matrix {
    x.zip_map(grad, |x, g| {
        if g > 0.0 {
            x + epsilon
        } else if g < 0.0 {
            x - epsilon
        } else {
            x
        }
    })
}

impl TrainingHook for AdvTrainingHook {
    fn name(&self) -> &str {
        "adv-training"
    }

    fn needs_input_grad(&self) -> bool {
        true
    }

    fn loss<'t>(&self, ctx: &HookContext<'t, '_>) -> Result<Tensor<'t>> {
        let grad = ctx
            .input_grad
            .ok_or_else(|| Error::Config("adversarial training needs the input gradient".into()))?;
        let adv = ctx.forward_on(fgsm(ctx.features, grad, self.epsilon))?;
        let nll = adv.nll_loss(ctx.train_rows.clone(), ctx.targets.clone())?;
        Ok(nll.scale(self.lambda_adv))
    }
}

/// `weight · ‖x_AE − x‖₁ / (n·d)` over all nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionHook {
    pub weight: f64,
}

impl TrainingHook for ReconstructionHook {
    fn name(&self) -> &str {
        "autoencoder"
    }

    fn loss<'t>(&self, ctx: &HookContext<'t, '_>) -> Result<Tensor<'t>> {
        let rec = ctx
            .forward
            .reconstruction
            .ok_or_else(|| Error::Config("reconstruction loss needs a model with a denoiser".into()))?;
        let x = ctx.tape.leaf_rc(ctx.features.clone(), false);
        let scale = self.weight / ctx.features.len().max(1) as f64;
        Ok(rec.sub(x)?.l1_norm().scale(scale))
    }
}
