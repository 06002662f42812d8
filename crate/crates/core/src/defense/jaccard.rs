use crate::error::Result;
use crate::graph::Graph;

/// Sorted column ids with a positive value, per node.
fn supports(g: &Graph) -> Vec<Vec<usize>> {
    (0..g.num_nodes())
        .map(|u| {
            g.features()
                .row(u)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Jaccard index of two sorted supports; 1 when both are empty.
pub fn jaccard_index(a: &[usize], b: &[usize]) -> f64 {
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Keeps the edges whose endpoints' binarized feature supports have a
/// Jaccard index of at least `threshold`.
pub fn jaccard_defense(g: &Graph, threshold: f64) -> Result<Graph> {
    let s = supports(g);
    let kept: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| jaccard_index(&s[u], &s[v]) >= threshold)
        .collect();
    if kept.len() < g.num_edges() {
        log::debug!("jaccard({threshold}) removed {} of {} edges", g.num_edges() - kept.len(), g.num_edges());
    }
    g.with_edges(kept)
}
