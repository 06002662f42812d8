//! JSON checkpoints: `{"format", "spec", "guard", "autoencoder", "meta",
//! "params": [{"name", "rows", "cols", "data"}], "batch_stats": [{"mean",
//! "var"}]}`. Numbers use shortest round-trip formatting, so a reload is
//! bit-exact.

use std::fs;
use std::path::Path;

use gnnbench_autodiff::{BatchStats, Matrix};
use serde::{Deserialize, Serialize};

use super::{AutoencoderSettings, GuardSettings, Model, ModelSpec, TrainingMeta};
use crate::error::{Error, Result};

const FORMAT: &str = "gnnbench-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub guard: Option<GuardSettings>,
    pub autoencoder: Option<AutoencoderSettings>,
    pub meta: TrainingMeta,
    pub params: Vec<NamedArray>,
    pub batch_stats: Vec<StoredStats>,
}

impl From<&Model> for Checkpoint {
    fn from(m: &Model) -> Self {
        Self {
            format: FORMAT.into(),
            spec: m.spec.clone(),
            guard: m.guard.clone(),
            autoencoder: m.autoencoder.clone(),
            meta: m.meta.clone(),
            params: m
                .params
                .names
                .iter()
                .zip(&m.params.values)
                .map(|(name, v)| NamedArray {
                    name: name.clone(),
                    rows: v.rows(),
                    cols: v.cols(),
                    data: v.data().to_vec(),
                })
                .collect(),
            batch_stats: m
                .bn_stats
                .iter()
                .map(|s| StoredStats {
                    mean: s.mean.clone(),
                    var: s.var.clone(),
                })
                .collect(),
        }
    }
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Model> {
        if self.format != FORMAT {
            return Err(Error::Validation(format!("unsupported checkpoint format {:?}", self.format)));
        }
        let mut model = Model::build_wrapped(self.spec, self.meta.seed, self.guard, self.autoencoder)?;
        if self.params.len() != model.params.len() || self.batch_stats.len() != model.bn_stats.len() {
            return Err(Error::Validation("checkpoint does not match its architecture".into()));
        }
        for (slot, stored) in self.params.into_iter().enumerate() {
            let expected = &model.params.names[slot];
            let shape = model.params.values[slot].shape();
            if &stored.name != expected || (stored.rows, stored.cols) != shape {
                return Err(Error::Validation(format!(
                    "checkpoint parameter {} {}x{} does not match {expected} {}x{}",
                    stored.name, stored.rows, stored.cols, shape.0, shape.1
                )));
            }
            model.params.values[slot] = Matrix::from_vec(stored.rows, stored.cols, stored.data)?;
        }
        model.bn_stats = self
            .batch_stats
            .into_iter()
            .map(|s| BatchStats { mean: s.mean, var: s.var })
            .collect();
        model.meta = self.meta;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(&Checkpoint::from(model))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<Checkpoint>(&text)?.into_model()
}
