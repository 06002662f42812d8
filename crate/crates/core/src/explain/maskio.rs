//! JSON mask files.
//!
//! Sparse files list only nonzero entries as `[row, col, value]`; dense files
//! store the full row-major matrix. Both round-trip values exactly.

use std::fs;
use std::path::Path;

use gnnbench_autodiff::Matrix;
use serde::{Deserialize, Serialize};

use super::ExplanationMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskEncoding {
    Dense,
    #[default]
    Sparse,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "lowercase")]
enum Values {
    Dense { data: Vec<f64> },
    Sparse { entries: Vec<(usize, usize, f64)> },
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    format: String,
    explainer: String,
    target: usize,
    seed: u64,
    config: serde_json::Value,
    support: Vec<usize>,
    subgraph: Option<Vec<usize>>,
    rows: usize,
    cols: usize,
    values: Values,
}

const FORMAT: &str = "gnnbench-mask-v1";

/// The file contents `write_mask` would produce.
pub fn encode_mask(mask: &ExplanationMask, encoding: MaskEncoding) -> Result<String> {
    let m = &mask.feature_mask;
    let values = match encoding {
        MaskEncoding::Dense => Values::Dense { data: m.data().to_vec() },
        MaskEncoding::Sparse => Values::Sparse {
            entries: (0..m.rows())
                .flat_map(|r| m.row(r).iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(c, &v)| (r, c, v)))
                .collect(),
        },
    };
    let file = MaskFile {
        format: FORMAT.into(),
        explainer: mask.explainer.clone(),
        target: mask.target,
        seed: mask.seed,
        config: mask.config.clone(),
        support: mask.support.clone(),
        subgraph: mask.subgraph.clone(),
        rows: m.rows(),
        cols: m.cols(),
        values,
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn write_mask(mask: &ExplanationMask, path: &Path, encoding: MaskEncoding) -> Result<()> {
    let text = encode_mask(mask, encoding)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<ExplanationMask> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: MaskFile = serde_json::from_str(&text)?;
    if file.format != FORMAT {
        return Err(Error::Validation(format!("{}: unknown mask format {:?}", path.display(), file.format)));
    }
    if file.support.len() != file.rows {
        return Err(Error::Validation(format!(
            "{}: {} support nodes for {} mask rows",
            path.display(),
            file.support.len(),
            file.rows
        )));
    }
    let feature_mask = match file.values {
        Values::Dense { data } => Matrix::from_vec(file.rows, file.cols, data)?,
        Values::Sparse { entries } => {
            let mut m = Matrix::zeros(file.rows, file.cols);
            for (r, c, v) in entries {
                if r >= file.rows || c >= file.cols {
                    return Err(Error::Validation(format!("{}: entry ({r}, {c}) out of range", path.display())));
                }
                m.set(r, c, v);
            }
            m
        }
    };
    Ok(ExplanationMask {
        explainer: file.explainer,
        target: file.target,
        seed: file.seed,
        config: file.config,
        support: file.support,
        feature_mask,
        subgraph: file.subgraph,
    })
}
