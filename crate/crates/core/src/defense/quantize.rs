use gnnbench_autodiff::Matrix;

use crate::error::{Error, Result};

/// Snaps every column to the nearest of `num_levels` equally spaced values
/// spanning that column's range. Constant columns pass through.
pub fn quantize_features(x: &Matrix, num_levels: usize) -> Result<Matrix> {
    if num_levels < 2 {
        return Err(Error::Parameter(format!("quantization needs at least 2 levels, got {num_levels}")));
    }
    let (rows, cols) = x.shape();
    let steps = (num_levels - 1) as f64;
    let mut out = x.clone();
    for j in 0..cols {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..rows {
            lo = lo.min(x.get(i, j));
            hi = hi.max(x.get(i, j));
        }
        if !(hi > lo) {
            continue;
        }
        let span = hi - lo;
        for i in 0..rows {
            let k = ((x.get(i, j) - lo) / span * steps).round().clamp(0.0, steps);
            let v = if k == steps { hi } else { lo + span * k / steps };
            out.set(i, j, v);
        }
    }
    Ok(out)
}
