use std::rc::Rc;

use gnnbench_autodiff::{BatchStats, Matrix, Tape, Tensor};
use rand_distr::{Distribution, Normal};

use super::{Layer, Model, Propagation, BN_EPS, GAT_SLOPE};
use crate::error::{Error, Result};
use crate::seed;

/// Training mode uses batch statistics and input noise drawn from
/// `noise_seed`; evaluation uses stored statistics and no noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { noise_seed: u64 },
    Eval,
}

pub struct Forward<'t> {
    pub log_probs: Tensor<'t>,
    /// Denoiser output, when the model has one.
    pub reconstruction: Option<Tensor<'t>>,
    /// Batch statistics in layer order (training mode only).
    pub stats: Vec<BatchStats>,
}

struct Ctx<'a, 't> {
    tape: &'t Tape,
    params: &'a [Tensor<'t>],
    prop: &'a Propagation,
    mode: Mode,
    model: &'a Model,
    stats: Vec<BatchStats>,
}

/// Cosine similarity of the endpoint embeddings of every directed edge,
/// clipped below at zero.
fn edge_similarity(h: &Matrix, prop: &Propagation) -> Matrix {
    let norms: Vec<f64> = (0..h.rows())
        .map(|r| h.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let sims = prop
        .src
        .iter()
        .zip(prop.dst.iter())
        .map(|(&s, &d)| {
            let denom = norms[s] * norms[d];
            if denom == 0.0 {
                return 0.0;
            }
            let dot: f64 = h.row(s).iter().zip(h.row(d)).map(|(a, b)| a * b).sum();
            (dot / denom).max(0.0)
        })
        .collect();
    Matrix::column(sims)
}

impl<'t> Ctx<'_, 't> {
    fn p(&self, i: usize) -> Tensor<'t> {
        self.params[i]
    }

    fn constant(&self, m: Matrix) -> Tensor<'t> {
        self.tape.constant(m)
    }

    /// Per-edge message multiplier `deg(dst) * w`, where `w` normalizes the
    /// (pruned) similarities over each destination's neighborhood.
    fn guard_factor(&self, h: Tensor<'t>, theta: usize) -> Result<Tensor<'t>> {
        let settings = self.model.guard.as_ref().expect("guard parameters imply settings");
        let sims = self.constant(edge_similarity(&h.value(), self.prop));
        let gate = if settings.drop {
            let tau = self.p(theta).sigmoid().scale(-1.0);
            sims.add_row(tau)?.relu()
        } else {
            sims
        };
        let w = gate.segment_normalize(self.prop.dst.clone(), self.prop.num_nodes)?;
        Ok(w.mul(self.constant(self.prop.dst_degree.clone()))?)
    }

    /// Sum over incoming edges of `h[src] * coef`.
    fn weighted_aggregate(&self, h: Tensor<'t>, coef: Tensor<'t>) -> Result<Tensor<'t>> {
        let msgs = h.gather_rows(self.prop.src.clone())?.mul_col(coef)?;
        Ok(msgs.scatter_add_rows(self.prop.dst.clone(), self.prop.num_nodes)?)
    }

    fn gating(&self, h: Tensor<'t>, guard: Option<usize>) -> Result<Option<Tensor<'t>>> {
        match guard {
            Some(theta) if self.prop.num_directed_edges() > 0 => Ok(Some(self.guard_factor(h, theta)?)),
            _ => Ok(None),
        }
    }

    fn layer(&mut self, layer: &Layer, h: Tensor<'t>) -> Result<Tensor<'t>> {
        Ok(match layer {
            Layer::Gcn { w, b, guard } => {
                let factor = self.gating(h, *guard)?;
                let hw = h.matmul(self.p(*w))?;
                let agg = match factor {
                    None => hw.spmm(self.prop.gcn.clone())?,
                    Some(f) => {
                        let coef = self.constant(self.prop.gcn_edge_coef.clone()).mul(f)?;
                        let own = hw.mul_col(self.constant(self.prop.gcn_self_coef.clone()))?;
                        self.weighted_aggregate(hw, coef)?.add(own)?
                    }
                };
                agg.add_row(self.p(*b))?
            }
            Layer::Sage { w_neigh, w_root, b, guard } => {
                let factor = self.gating(h, *guard)?;
                let neigh = h.matmul(self.p(*w_neigh))?;
                let agg = match factor {
                    None => neigh.spmm(self.prop.mean.clone())?,
                    Some(f) => {
                        let inv: Vec<f64> = self.prop.dst_degree.data().iter().map(|d| 1.0 / d).collect();
                        let coef = self.constant(Matrix::column(inv)).mul(f)?;
                        self.weighted_aggregate(neigh, coef)?
                    }
                };
                agg.add_row(self.p(*b))?.add(h.matmul(self.p(*w_root))?)?
            }
            Layer::Gat { heads, b, guard } => {
                let factor = self.gating(h, *guard)?;
                let n = self.prop.num_nodes;
                let scale = match factor {
                    None => None,
                    Some(f) => Some(Tensor::concat_rows(&[f, self.constant(Matrix::filled(n, 1, 1.0))])?),
                };
                let mut outs = Vec::with_capacity(heads.len());
                for head in heads {
                    let hw = h.matmul(self.p(head.w))?;
                    let a_src = hw.matmul(self.p(head.att_src))?.gather_rows(self.prop.gat_src.clone())?;
                    let a_dst = hw.matmul(self.p(head.att_dst))?.gather_rows(self.prop.gat_dst.clone())?;
                    let logits = a_src.add(a_dst)?.leaky_relu(GAT_SLOPE);
                    let mut alpha = logits.segment_softmax(self.prop.gat_dst.clone(), n)?;
                    if let Some(s) = scale {
                        alpha = alpha.mul(s)?;
                    }
                    let msgs = hw.gather_rows(self.prop.gat_src.clone())?.mul_col(alpha)?;
                    outs.push(msgs.scatter_add_rows(self.prop.gat_dst.clone(), n)?);
                }
                let cat = if outs.len() == 1 { outs[0] } else { Tensor::concat_cols(&outs)? };
                cat.add_row(self.p(*b))?
            }
            Layer::Gin { w, b, mlp, guard } => {
                let factor = self.gating(h, *guard)?;
                let hw = h.matmul(self.p(*w))?;
                let agg = match factor {
                    None => hw.spmm(self.prop.sum_self.clone())?,
                    Some(f) => self.weighted_aggregate(hw, f)?.add(hw)?,
                };
                let mut out = agg.add_row(self.p(*b))?;
                for inner in mlp {
                    out = self.layer(inner, out)?;
                }
                out
            }
            Layer::Linear { w, b } => h.matmul(self.p(*w))?.add_row(self.p(*b))?,
            Layer::BatchNorm { gamma, beta, slot } => {
                let normed = match self.mode {
                    Mode::Train { .. } => {
                        let (t, stats) = h.batch_norm(BN_EPS);
                        self.stats.push(stats);
                        t
                    }
                    Mode::Eval => {
                        let stats = &self.model.bn_stats[*slot];
                        let shift = Matrix::row_vector(stats.mean.iter().map(|m| -m).collect());
                        let inv = Matrix::row_vector(stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect());
                        h.add_row(self.constant(shift))?.mul_row(self.constant(inv))?
                    }
                };
                normed.mul_row(self.p(*gamma))?.add_row(self.p(*beta))?
            }
            Layer::Relu => h.relu(),
            Layer::LogSoftmax => h.log_softmax(),
        })
    }
}

impl Model {
    /// Differentiable forward pass; `params` must mirror `self.params`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &[Tensor<'t>],
        x: Tensor<'t>,
        prop: &Propagation,
        mode: Mode,
    ) -> Result<Forward<'t>> {
        if params.len() != self.params.len() {
            return Err(Error::Parameter(format!(
                "forward got {} parameter tensors for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        let (rows, cols) = x.shape();
        if cols != self.spec.input_size || rows != prop.num_nodes {
            return Err(Error::Validation(format!(
                "input is {rows}x{cols}, model expects {}x{}",
                prop.num_nodes, self.spec.input_size
            )));
        }
        let mut ctx = Ctx {
            tape,
            params,
            prop,
            mode,
            model: self,
            stats: Vec::new(),
        };
        let mut reconstruction = None;
        let mut h = x;
        if !self.ae_layers.is_empty() {
            let sigma = self.autoencoder.as_ref().map_or(0.0, |a| a.noise_std);
            if let (Mode::Train { noise_seed }, true) = (mode, sigma > 0.0) {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
                let mut rng = seed::rng(noise_seed);
                let noise: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
                h = h.add(tape.constant(Matrix::from_vec(rows, cols, noise)?))?;
            }
            for layer in &self.ae_layers {
                h = ctx.layer(layer, h)?;
            }
            reconstruction = Some(h);
        }
        for layer in &self.layers {
            h = ctx.layer(layer, h)?;
        }
        Ok(Forward {
            log_probs: h,
            reconstruction,
            stats: ctx.stats,
        })
    }

    /// Parameters recorded as constants on `tape`.
    pub fn constant_params<'t>(&self, tape: &'t Tape) -> Vec<Tensor<'t>> {
        self.params.values.iter().map(|m| tape.constant(m.clone())).collect()
    }

    /// Evaluation-mode log-probabilities for features `x` on `prop`.
    pub fn log_probs(&self, x: &Matrix, prop: &Propagation) -> Result<Matrix> {
        let tape = Tape::new();
        let params = self.constant_params(&tape);
        let x = tape.leaf_rc(Rc::new(x.clone()), false);
        let out = self.forward(&tape, &params, x, prop, Mode::Eval)?;
        Ok((*out.log_probs.value()).clone())
    }

    /// Evaluation-mode log-probabilities for every node of `g`.
    pub fn predict(&self, g: &crate::graph::Graph) -> Result<Matrix> {
        self.log_probs(g.features(), &Propagation::from_graph(g))
    }
}
