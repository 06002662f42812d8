use gnnbench_autodiff::{Matrix, Tape, Tensor};
use gnnbench_core::explain::{Explainer, ExplanationMask, FrozenModel, GnnExplainer, NodeModel};
use gnnbench_core::graph::{generate_synthetic, split, Graph, PerturbationSpec};
use gnnbench_core::metrics::{
    aggregate, consistency, fidelity, sparsity, stability, summarize, FidelityMode, NodeMetrics, StabilityInput,
    StabilityTrial, DEFAULT_ZERO_TOL,
};
use gnnbench_core::models::{train, Architecture, Model, ModelSpec, Propagation, TrainConfig};
use gnnbench_core::{Error, Result};
use proptest::prelude::*;

fn mask(target: usize, support: Vec<usize>, values: Matrix) -> ExplanationMask {
    ExplanationMask {
        explainer: "fixture".into(),
        target,
        seed: 0,
        config: serde_json::Value::Null,
        support,
        feature_mask: values,
        subgraph: None,
    }
}

fn ones_for(g: &Graph, target: usize, hops: usize) -> ExplanationMask {
    let support = g.k_hop_nodes(target, hops);
    let values = Matrix::filled(support.len(), g.num_features(), 1.0);
    mask(target, support, values)
}

/// Predicts class 1 exactly when the node's own first feature is positive.
struct Threshold;

impl NodeModel for Threshold {
    fn hops(&self) -> usize {
        1
    }

    fn log_probs<'t>(&self, tape: &'t Tape, x: Tensor<'t>, _prop: &Propagation) -> Result<Tensor<'t>> {
        let cols = x.shape().1;
        let mut w = Matrix::zeros(cols, 2);
        w.set(0, 1, 4.0);
        let bias = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        Ok(x.matmul(tape.constant(w))?.add_row(tape.constant(bias))?.log_softmax())
    }
}

fn trained(g: &Graph, arch: Architecture) -> Model {
    let masks = split(g, 0.8, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 40,
        lr: 0.01,
        ..TrainConfig::new(5)
    };
    let spec = ModelSpec::new(arch, g.num_features(), g.num_classes());
    train(Model::build(spec, 5).unwrap(), g, &masks, &cfg, &[]).unwrap()
}

#[test]
fn fidelity_extremes() {
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
    let g = Graph::new(x, vec![(0, 1), (1, 2)], vec![1, 1, 0], 2).unwrap();
    let ones: Vec<ExplanationMask> = [0, 1].iter().map(|&t| ones_for(&g, t, 1)).collect();
    for mode in [FidelityMode::Agreement, FidelityMode::AbsoluteDifference] {
        let f = fidelity(&Threshold, &g, &ones, mode).unwrap();
        assert_eq!(f, if mode == FidelityMode::Agreement { 1.0 } else { 0.0 });
    }

    // Zero masks erase the feature every prediction of class 1 rests on.
    let zeros: Vec<ExplanationMask> = ones
        .iter()
        .map(|m| mask(m.target, m.support.clone(), Matrix::zeros(m.support.len(), 2)))
        .collect();
    assert_eq!(fidelity(&Threshold, &g, &zeros, FidelityMode::Agreement).unwrap(), 0.0);
    let abs = fidelity(&Threshold, &g, &zeros, FidelityMode::AbsoluteDifference).unwrap();
    let p1 = |z: f64| z.exp() / (z.exp() + 1f64.exp());
    assert!((abs - (p1(4.0) - p1(0.0))).abs() < 1e-12);

    assert!(matches!(
        fidelity(&Threshold, &g, &[], FidelityMode::Agreement),
        Err(Error::UndefinedMetric(_))
    ));
}

#[test]
fn indicator_sparsity() {
    let mut values = Matrix::zeros(20, 7);
    for r in [0, 3, 4, 9, 15] {
        values.row_mut(r).iter_mut().for_each(|v| *v = 1.0);
    }
    let m = mask(0, (0..20).collect(), values);
    assert_eq!(sparsity(&m, DEFAULT_ZERO_TOL).unwrap(), 0.25);
    let tiny = mask(0, vec![0], Matrix::filled(1, 4, 1e-9));
    assert_eq!(sparsity(&tiny, DEFAULT_ZERO_TOL).unwrap(), 0.0);
    assert_eq!(sparsity(&tiny, 0.0).unwrap(), 1.0);
}

#[test]
fn consistency_requires_aligned_supports() {
    let a = mask(0, vec![0, 1], Matrix::filled(2, 3, 0.5));
    let b = mask(0, vec![0, 2], Matrix::filled(2, 3, 0.5));
    assert!(matches!(consistency(&[a.clone(), b]), Err(Error::Alignment(_))));
    assert!(matches!(consistency(&[a]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn stability_of_an_identity_perturbation_is_zero() {
    let g = generate_synthetic(40, 3, 10, 0.8, 31).unwrap();
    let model = trained(&g, Architecture::Gcn2);
    let frozen = FrozenModel::new(&model);
    let explainer = GnnExplainer::default();
    let prepare = |g: &Graph| Ok(g.clone());
    let input = StabilityInput {
        model: &frozen,
        explainer: &explainer,
        graph: &g,
        prepare: &prepare,
        target: 5,
    };
    let identity: Vec<StabilityTrial> = (0..3)
        .map(|r| StabilityTrial {
            perturbation: PerturbationSpec::identity(r),
            explain_seed: 100 + r,
        })
        .collect();
    assert_eq!(stability(&input, &identity, None).unwrap(), 0.0);

    let noisy: Vec<StabilityTrial> = (0..3)
        .map(|r| StabilityTrial {
            perturbation: PerturbationSpec::new(r),
            explain_seed: 100 + r,
        })
        .collect();
    let originals: Vec<ExplanationMask> = noisy
        .iter()
        .map(|t| explainer.explain(&frozen, &g, 5, t.explain_seed, None).unwrap())
        .collect();
    let fresh = stability(&input, &noisy, None).unwrap();
    assert!(fresh >= 0.0);
    assert_eq!(stability(&input, &noisy, Some(&originals)).unwrap(), fresh);
    assert!(matches!(stability(&input, &noisy, Some(&originals[..1])), Err(Error::Alignment(_))));
    assert!(matches!(stability(&input, &[], None), Err(Error::UndefinedMetric(_))));
}

#[test]
fn aggregate_examples() {
    let one = summarize(&[0.42]).unwrap();
    assert_eq!((one.mean, one.std, one.count), (0.42, 0.0, 1));
    let two = summarize(&[0.0, 1.0]).unwrap();
    assert_eq!(two.mean, 0.5);
    assert!((two.std - 0.5f64.sqrt()).abs() < 1e-15);
    assert_eq!(two.display(3), "0.500 ± 0.707");
    assert!(matches!(aggregate(&[], 5, FidelityMode::Agreement), Err(Error::UndefinedMetric(_))));

    let cells = [node(0, [1.0, 0.1, 0.2, 0.3, 0.9]), node(1, [0.0, 0.3, 0.4, 0.5, 1.0])];
    let r = aggregate(&cells, 5, FidelityMode::AbsoluteDifference).unwrap();
    assert_eq!(r.fidelity, r.fidelity_abs);
    assert!((r.fidelity.mean - 0.2).abs() < 1e-15);
    assert_eq!(r.fidelity_agreement.mean, 0.5);
    assert_eq!((r.nodes, r.runs), (2, 5));
}

fn node(id: usize, v: [f64; 5]) -> NodeMetrics {
    NodeMetrics {
        node: id,
        fidelity_agreement: v[0],
        fidelity_abs: v[1],
        sparsity: v[2],
        stability: v[3],
        consistency: v[4],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn all_ones_masks_have_full_agreement(seed in 0u64..500, arch_ix in 0usize..6) {
        let g = generate_synthetic(24, 3, 6, 0.7, seed).unwrap();
        let arch = Architecture::ALL[arch_ix];
        let model = Model::build(ModelSpec::new(arch, 6, 3), seed).unwrap();
        let frozen = FrozenModel::new(&model);
        let masks: Vec<ExplanationMask> = (0..24).step_by(5).map(|t| ones_for(&g, t, arch.hops())).collect();
        prop_assert_eq!(fidelity(&frozen, &g, &masks, FidelityMode::Agreement).unwrap(), 1.0);
        prop_assert_eq!(fidelity(&frozen, &g, &masks, FidelityMode::AbsoluteDifference).unwrap(), 0.0);
    }

    #[test]
    fn sparsity_is_monotone(
        base in proptest::collection::vec(0.0f64..1.0, 24),
        bump in proptest::collection::vec(0.0f64..1.0, 24),
        tol in 0.0f64..0.5,
    ) {
        let lo = mask(0, (0..4).collect(), Matrix::from_vec(4, 6, base.clone()).unwrap());
        let hi_vals: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let hi = mask(0, (0..4).collect(), Matrix::from_vec(4, 6, hi_vals).unwrap());
        let (s_lo, s_hi) = (sparsity(&lo, tol).unwrap(), sparsity(&hi, tol).unwrap());
        prop_assert!(s_lo <= s_hi);
        prop_assert!((0.0..=1.0).contains(&s_hi));
    }

    #[test]
    fn duplicated_masks_are_fully_consistent(
        vals in proptest::collection::vec(0.0f64..1.0, 12),
        copies in 2usize..6,
    ) {
        prop_assume!(vals.iter().any(|&v| v > 0.0));
        let m = mask(3, vec![1, 3, 7], Matrix::from_vec(3, 4, vals).unwrap());
        let c = consistency(&vec![m; copies]).unwrap();
        prop_assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_ignores_input_order(
        rows in proptest::collection::vec(proptest::array::uniform5(0.0f64..2.0), 1..20),
        rot in 0usize..20,
    ) {
        let cells: Vec<NodeMetrics> = rows.iter().enumerate().map(|(i, v)| node(i, *v)).collect();
        let mut shuffled = cells.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        prop_assert_eq!(
            aggregate(&cells, 5, FidelityMode::Agreement).unwrap(),
            aggregate(&shuffled, 5, FidelityMode::Agreement).unwrap()
        );
    }
}
