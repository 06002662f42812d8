use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;

/// How the coalitions preceding the candidate are enumerated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    /// Average over this many uniformly random player orderings.
    MonteCarlo(usize),
    /// Every subset of the other players with its exact Shapley weight.
    Exhaustive,
}

/// Shapley value of a candidate coalition acting as one player beside
/// `others`. `marginal(S)` must return `f(S ∪ candidate) − f(S)`.
pub fn shapley_mc<R: Rng + ?Sized>(
    others: &[usize],
    sampling: Sampling,
    rng: &mut R,
    mut marginal: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<f64> {
    match sampling {
        Sampling::MonteCarlo(samples) => {
            if samples == 0 {
                return Ok(0.0);
            }
            // Index `others.len()` stands for the candidate.
            let mut order: Vec<usize> = (0..=others.len()).collect();
            let mut before = Vec::with_capacity(others.len());
            let mut total = 0.0;
            for _ in 0..samples {
                order.shuffle(rng);
                before.clear();
                for &k in order.iter().take_while(|&&k| k != others.len()) {
                    before.push(others[k]);
                }
                before.sort_unstable();
                total += marginal(&before)?;
            }
            Ok(total / samples as f64)
        }
        Sampling::Exhaustive => exact_shapley(others, marginal),
    }
}

/// `Σ_{S ⊆ others} |S|! (m − |S|)! / (m + 1)! · marginal(S)` with
/// `m = others.len()`.
pub fn exact_shapley(others: &[usize], mut marginal: impl FnMut(&[usize]) -> Result<f64>) -> Result<f64> {
    let m = others.len();
    assert!(m < 63, "exhaustive Shapley over {m} players");
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let weights: Vec<f64> = (0..=m).map(|s| fact(s) * fact(m - s) / fact(m + 1)).collect();
    let mut total = 0.0;
    let mut subset = Vec::with_capacity(m);
    for bits in 0u64..(1u64 << m) {
        subset.clear();
        subset.extend((0..m).filter(|i| bits >> i & 1 == 1).map(|i| others[i]));
        total += weights[subset.len()] * marginal(&subset)?;
    }
    Ok(total)
}
