use std::collections::BTreeSet;

use gnnbench_autodiff::{Matrix, Tape, Tensor};
use gnnbench_core::explain::{
    shapley_mc, Explainer, FrozenModel, GnnExplainer, GnnExplainerConfig, NodeModel, Sampling, SubgraphX,
    SubgraphXConfig,
};
use gnnbench_core::graph::{generate_synthetic, split, Graph};
use gnnbench_core::models::{train, Architecture, Model, ModelSpec, Propagation, TrainConfig};
use gnnbench_core::{seed, Error, Result};
use proptest::prelude::*;

// Two-player game: candidate c and one other player o.
fn two_player(s: &[usize]) -> Result<f64> {
    Ok(if s.is_empty() { 0.7 - 0.1 } else { 0.9 - 0.2 })
}

const TWO_PLAYER_PHI: f64 = 0.65;

#[test]
fn exhaustive_two_player_game_is_exact() {
    let mut rng = seed::rng(0);
    let phi = shapley_mc(&[1], Sampling::Exhaustive, &mut rng, two_player).unwrap();
    assert!((phi - TWO_PLAYER_PHI).abs() < 1e-12);
}

#[test]
fn sampled_two_player_game_is_close_and_unbiased() {
    let estimates: Vec<f64> = (0..50)
        .map(|r| shapley_mc(&[1], Sampling::MonteCarlo(100), &mut seed::rng(r), two_player).unwrap())
        .collect();
    let within = estimates.iter().filter(|e| (*e - TWO_PLAYER_PHI).abs() <= 0.05).count();
    assert!(within >= 45, "{within} of 50 within tolerance");
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((mean - TWO_PLAYER_PHI).abs() <= 0.02, "mean {mean}");
}

#[test]
fn null_marginals_score_zero() {
    let zero = |_: &[usize]| Ok(0.0);
    assert_eq!(shapley_mc(&[3, 4, 5], Sampling::MonteCarlo(40), &mut seed::rng(1), zero).unwrap(), 0.0);
    assert_eq!(shapley_mc(&[], Sampling::Exhaustive, &mut seed::rng(1), zero).unwrap(), 0.0);
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Average marginal over every ordering of the players, candidate
    /// included as player `m`.
    #[test]
    fn exhaustive_sampling_matches_permutation_average(
        m in 0usize..6,
        table in proptest::collection::vec(-1.0f64..1.0, 128),
    ) {
        let others: Vec<usize> = (0..m).collect();
        let f = |set: &BTreeSet<usize>| table[set.iter().map(|&k| 1usize << k).sum::<usize>()];
        let marginal = |s: &[usize]| {
            let without: BTreeSet<usize> = s.iter().copied().collect();
            let mut with = without.clone();
            with.insert(m);
            Ok(f(&with) - f(&without))
        };
        let got = shapley_mc(&others, Sampling::Exhaustive, &mut seed::rng(0), marginal).unwrap();

        let players: Vec<usize> = (0..=m).collect();
        let perms = permutations(&players);
        let mut total = 0.0;
        for p in &perms {
            let before: BTreeSet<usize> = p.iter().copied().take_while(|&k| k != m).collect();
            let mut with = before.clone();
            with.insert(m);
            total += f(&with) - f(&before);
        }
        let want = total / perms.len() as f64;
        prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
    }
}

/// One-layer sum aggregation followed by a fixed linear read-out.
struct SumModel {
    w: Matrix,
    bias: Matrix,
}

impl NodeModel for SumModel {
    fn hops(&self) -> usize {
        1
    }

    fn log_probs<'t>(&self, tape: &'t Tape, x: Tensor<'t>, prop: &Propagation) -> Result<Tensor<'t>> {
        let h = x.spmm(prop.sum_self.clone())?;
        Ok(h.matmul(tape.constant(self.w.clone()))?.add_row(tape.constant(self.bias.clone()))?.log_softmax())
    }
}

/// Star on `leaves + 1` nodes where only `planted` carries the feature the
/// read-out looks at.
fn planted_star(leaves: usize, planted: usize) -> (Graph, SumModel) {
    let n = leaves + 1;
    let mut x = Matrix::zeros(n, 2);
    for u in 1..n {
        x.set(u, usize::from(u == planted), 1.0);
    }
    let edges: Vec<_> = (1..n).map(|u| (0, u)).collect();
    let g = Graph::new(x, edges, vec![0; n], 2).unwrap();
    let model = SumModel {
        w: Matrix::from_rows(&[vec![0.3, 0.0], vec![0.0, 6.0]]).unwrap(),
        bias: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
    };
    (g, model)
}

/// Class-`class` probability at node 0 with every row outside `keep` zeroed.
fn star_value(g: &Graph, model: &SumModel, keep: &BTreeSet<usize>, class: usize) -> f64 {
    let mut x = g.features().clone();
    for u in 0..g.num_nodes() {
        if !keep.contains(&u) {
            x.row_mut(u).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut logits = vec![model.bias.get(0, 0), model.bias.get(0, 1)];
    for u in 0..g.num_nodes() {
        for (c, l) in logits.iter_mut().enumerate() {
            *l += (0..2).map(|k| x.get(u, k) * model.w.get(k, c)).sum::<f64>();
        }
    }
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits[class].exp() / z
}

/// Exact Shapley score of `coalition` against every other node of the star.
fn exact_score(g: &Graph, model: &SumModel, coalition: &BTreeSet<usize>, class: usize) -> f64 {
    let others: Vec<usize> = (0..g.num_nodes()).filter(|u| !coalition.contains(u)).collect();
    let m = others.len();
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut total = 0.0;
    for bits in 0u32..(1 << m) {
        let s: BTreeSet<usize> = (0..m).filter(|i| bits >> i & 1 == 1).map(|i| others[i]).collect();
        let with: BTreeSet<usize> = s.union(coalition).copied().collect();
        let w = fact(s.len()) * fact(m - s.len()) / fact(m + 1);
        total += w * (star_value(g, model, &with, class) - star_value(g, model, &s, class));
    }
    total
}

#[test]
fn subgraphx_finds_the_planted_leaf() {
    let (g, model) = planted_star(9, 6);
    let all: BTreeSet<usize> = (0..g.num_nodes()).collect();
    let class = if star_value(&g, &model, &all, 1) > 0.5 { 1 } else { 0 };
    assert_eq!(class, 1);

    // Best connected coalition of each size around the center.
    let mut best = vec![f64::NEG_INFINITY; 6];
    let mut best_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); 6];
    for bits in 0u32..(1 << 9) {
        if bits.count_ones() > 4 {
            continue;
        }
        let mut c: BTreeSet<usize> = (0..9).filter(|i| bits >> i & 1 == 1).map(|i| i + 1).collect();
        c.insert(0);
        let s = exact_score(&g, &model, &c, class);
        let k = c.len();
        if s > best[k] + 1e-12 {
            best[k] = s;
            best_sets[k] = c;
        }
    }
    assert!(best_sets[2..].iter().all(|c| c.contains(&6)));

    let explainer = SubgraphX::default();
    let mask = explainer.explain(&model, &g, 0, 3, None).unwrap();
    let chosen = mask.subgraph.clone().unwrap();
    assert!(chosen.contains(&0) && chosen.contains(&6), "{chosen:?}");
    assert!(chosen.len() <= 5);
    let chosen_set: BTreeSet<usize> = chosen.iter().copied().collect();
    assert!((exact_score(&g, &model, &chosen_set, class) - best[chosen.len()]).abs() < 1e-9);
    for (i, &u) in mask.support.iter().enumerate() {
        let on = chosen.contains(&u);
        assert!(mask.feature_mask.row(i).iter().all(|&v| v == if on { 1.0 } else { 0.0 }));
    }
}

fn connected(g: &Graph, nodes: &[usize]) -> bool {
    let set: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut seen = BTreeSet::from([nodes[0]]);
    let mut stack = vec![nodes[0]];
    while let Some(u) = stack.pop() {
        for &v in g.neighbors(u) {
            if set.contains(&v) && seen.insert(v) {
                stack.push(v);
            }
        }
    }
    seen.len() == set.len()
}

fn trained_gcn(g: &Graph) -> Model {
    let masks = split(g, 0.8, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        lr: 0.01,
        ..TrainConfig::new(2)
    };
    let spec = ModelSpec::new(Architecture::Gcn2, g.num_features(), g.num_classes());
    train(Model::build(spec, 1).unwrap(), g, &masks, &cfg, &[]).unwrap()
}

#[test]
fn subgraphx_on_a_trained_model_is_connected_and_deterministic() {
    let g = generate_synthetic(30, 3, 8, 0.8, 12).unwrap();
    let model = trained_gcn(&g);
    let frozen = FrozenModel::new(&model);
    let explainer = SubgraphX::new(SubgraphXConfig {
        rollout: 8,
        sample_num: 20,
        ..SubgraphXConfig::default()
    });
    for target in [0, 7, 19] {
        let a = explainer.explain(&frozen, &g, target, 5, None).unwrap();
        let chosen = a.subgraph.clone().unwrap();
        assert!(chosen.contains(&target));
        assert!(!chosen.is_empty() && chosen.len() <= 5);
        assert!(connected(&g, &chosen), "{chosen:?}");
        let hood = g.k_hop_nodes(target, 2);
        assert!(a.support.iter().all(|u| hood.contains(u)));
        assert_eq!(a, explainer.explain(&frozen, &g, target, 5, None).unwrap());
    }
}

#[test]
fn subgraphx_rejects_unknown_methods() {
    let (g, model) = planted_star(3, 1);
    let bad = SubgraphX::new(SubgraphXConfig {
        reward_method: "gnn_score".into(),
        ..SubgraphXConfig::default()
    });
    assert!(matches!(bad.explain(&model, &g, 0, 0, None), Err(Error::Config(_))));
    // Fewer nodes than min_atoms: the whole neighborhood comes back.
    let mask = SubgraphX::default().explain(&model, &g, 0, 0, None).unwrap();
    assert_eq!(mask.subgraph.unwrap(), vec![0, 1, 2, 3]);
}

#[test]
fn gnnexplainer_masks_are_bounded_seeded_and_read_only() {
    let g = generate_synthetic(40, 3, 10, 0.8, 4).unwrap();
    let model = trained_gcn(&g);
    let (g_before, p_before) = (g.clone(), model.params.clone());
    let frozen = FrozenModel::new(&model);
    let explainer = GnnExplainer::default();
    for target in [3, 11] {
        let a = explainer.explain(&frozen, &g, target, 9, None).unwrap();
        assert!(a.feature_mask.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.feature_mask.data().iter().any(|&v| v > 0.0));
        assert_eq!(a.support, g.k_hop_nodes(target, 2));
        assert_eq!(a.feature_mask.shape(), (a.support.len(), 10));
        assert_eq!(a, explainer.explain(&frozen, &g, target, 9, None).unwrap());
        assert_ne!(a.feature_mask, explainer.explain(&frozen, &g, target, 10, None).unwrap().feature_mask);
        // Zero features carry no mask.
        for (i, &u) in a.support.iter().enumerate() {
            for j in 0..10 {
                if g.features().get(u, j) == 0.0 {
                    assert_eq!(a.feature_mask.get(i, j), 0.0);
                }
            }
        }
    }
    assert_eq!(g, g_before);
    assert_eq!(model.params, p_before);
}

#[test]
fn gnnexplainer_shrinks_masks_a_model_ignores() {
    let x = Matrix::from_rows(&[vec![1.0, 0.5, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
    let g = Graph::new(x, vec![], vec![0, 1], 2).unwrap();
    let constant = SumModel {
        w: Matrix::zeros(3, 2),
        bias: Matrix::from_rows(&[vec![0.4, -0.2]]).unwrap(),
    };
    let mask = GnnExplainer::default().explain(&constant, &g, 0, 1, None).unwrap();
    assert_eq!(mask.support, vec![0]);
    let mean = mask.feature_mask.sum() / mask.feature_mask.len() as f64;
    assert!(mean < 0.5, "mean mask {mean}");

    let bad = GnnExplainer::new(GnnExplainerConfig {
        node_mask_type: "object".into(),
        ..GnnExplainerConfig::default()
    });
    assert!(matches!(bad.explain(&constant, &g, 0, 1, None), Err(Error::Config(_))));
}
