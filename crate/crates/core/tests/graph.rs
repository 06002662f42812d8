use std::fs;
use std::path::Path;

use gnnbench_autodiff::Matrix;
use gnnbench_core::graph::{
    generate_synthetic, load_graph_bundle, perturb, save_graph_bundle, split, Graph, PerturbationSpec, SyntheticSpec,
};
use gnnbench_core::Error;
use proptest::prelude::*;

fn write_bundle(dir: &Path, edges: &str, features: &str, labels: &str) {
    fs::write(dir.join("edges.tsv"), edges).unwrap();
    fs::write(dir.join("features.csv"), features).unwrap();
    fs::write(dir.join("labels.csv"), labels).unwrap();
}

fn cora_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora")
}

#[test]
fn cora_bundle_has_the_published_counts() {
    let g = load_graph_bundle(cora_dir()).unwrap();
    assert_eq!(g.num_nodes(), 2708);
    assert_eq!(g.num_edges(), 5278);
    assert_eq!(g.num_edges() * 2, 10556);
    assert_eq!(g.num_features(), 1433);
    assert_eq!(g.num_classes(), 7);
}

#[test]
fn minimal_bundle_and_reversed_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), "0\t1\n", "0.5\n1\n", "0\n1\n");
    let g = load_graph_bundle(dir.path()).unwrap();
    assert_eq!((g.num_nodes(), g.num_edges(), g.num_features()), (2, 1, 1));

    write_bundle(dir.path(), "0 1\n1 0\n0\t1\n", "1\n0\n", "0\n0\n");
    assert_eq!(load_graph_bundle(dir.path()).unwrap().edges(), &[(0, 1)]);
}

#[test]
fn ingestion_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("features.csv"), "1\n").unwrap();
    match load_graph_bundle(dir.path()).unwrap_err() {
        Error::MissingFile(p) => assert!(p.ends_with("labels.csv")),
        e => panic!("unexpected {e}"),
    }

    write_bundle(dir.path(), "0 1\n1 7\n", "1\n0\n", "0\n0\n");
    match load_graph_bundle(dir.path()).unwrap_err() {
        Error::Parse { file, line, .. } => assert_eq!((file.as_str(), line), ("edges.tsv", 2)),
        e => panic!("unexpected {e}"),
    }

    write_bundle(dir.path(), "0 0\n", "1\n0\n", "0\n0\n");
    assert!(load_graph_bundle(dir.path()).unwrap_err().to_string().contains("self-loop"));

    write_bundle(dir.path(), "0 1\n", "1,0\n0\n", "0\n0\n");
    let err = load_graph_bundle(dir.path()).unwrap_err();
    assert!(err.to_string().contains("ragged"), "{err}");
}

#[test]
fn meta_counts_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    write_bundle(dir.path(), "0 1\n", "1\n0\n", "0\n1\n");
    fs::write(
        dir.path().join("meta.json"),
        r#"{"num_nodes": 3, "num_features": 1, "num_classes": 2}"#,
    )
    .unwrap();
    assert!(matches!(load_graph_bundle(dir.path()), Err(Error::Validation(_))));
}

#[test]
fn bundle_round_trip_is_exact() {
    let g = generate_synthetic(30, 3, 6, 0.8, 4).unwrap();
    let noisy = g
        .with_features(Matrix::from_vec(30, 6, (0..180).map(|i| (i as f64 * 0.37).sin() / 3.0).collect()).unwrap())
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_graph_bundle(&noisy, dir.path(), None).unwrap();
    assert_eq!(load_graph_bundle(dir.path()).unwrap(), noisy);
}

#[test]
fn graph_construction_rejects_bad_input() {
    let x = Matrix::zeros(3, 1);
    assert!(Graph::new(x.clone(), vec![(0, 3)], vec![0, 0, 0], 1).is_err());
    assert!(Graph::new(x.clone(), vec![(1, 1)], vec![0, 0, 0], 1).is_err());
    assert!(Graph::new(x.clone(), vec![], vec![0, 2, 0], 2).is_err());
    assert!(Graph::new(x, vec![], vec![0, 0], 1).is_err());
}

#[test]
fn synthetic_generation_is_seeded_and_homophilous() {
    let a = generate_synthetic(60, 3, 16, 0.9, 1).unwrap();
    assert_eq!(a, generate_synthetic(60, 3, 16, 0.9, 1).unwrap());
    assert_ne!(a.edges(), generate_synthetic(60, 3, 16, 0.9, 2).unwrap().edges());
    assert_eq!(a.num_classes(), 3);

    let mut spec = SyntheticSpec::new(90, 3, 12, 1.0, 5);
    spec.feature_noise = 0.0;
    let pure = spec.generate().unwrap();
    assert!(pure.num_edges() > 0);
    assert!(pure.edges().iter().all(|&(u, v)| pure.labels()[u] == pure.labels()[v]));

    assert!(generate_synthetic(0, 1, 4, 0.5, 1).is_err());
    assert!(generate_synthetic(10, 0, 4, 0.5, 1).is_err());
    assert!(generate_synthetic(2, 3, 4, 0.5, 1).is_err());
}

#[test]
fn split_sizes() {
    let g = generate_synthetic(10, 2, 4, 0.5, 3).unwrap();
    let s = split(&g, 0.8, 7).unwrap();
    assert_eq!((s.train_nodes().len(), s.test_nodes().len()), (8, 2));
    assert_eq!(s, split(&g, 0.8, 7).unwrap());

    let cora = load_graph_bundle(cora_dir()).unwrap();
    let s = split(&cora, 0.8, 1).unwrap();
    assert!([2166, 2167].contains(&s.train_nodes().len()));
    assert!(split(&g, 1.0, 1).is_err());
}

#[test]
fn zero_perturbation_is_the_identity() {
    let g = generate_synthetic(40, 2, 10, 0.7, 9).unwrap();
    let (p, remap) = perturb(&g, &PerturbationSpec::identity(3), 5).unwrap();
    assert_eq!(p, g);
    assert!(remap.is_identity());
}

#[test]
fn perturbation_of_a_missing_node_is_rejected() {
    let g = generate_synthetic(10, 2, 4, 0.7, 9).unwrap();
    assert!(matches!(perturb(&g, &PerturbationSpec::new(1), 10), Err(Error::Parameter(_))));
}

#[test]
fn k_hop_subgraph_keeps_the_full_graph_degrees() {
    let x = Matrix::zeros(5, 1);
    let g = Graph::new(x, vec![(0, 1), (1, 2), (2, 3), (3, 4)], vec![0; 5], 1).unwrap();
    let sub = g.k_hop_subgraph(2, 1).unwrap();
    assert_eq!(sub.nodes, vec![1, 2, 3]);
    assert_eq!(sub.center, 1);
    assert_eq!(sub.full_degree, vec![2, 2, 2]);
    assert_eq!(g.k_hop_nodes(0, 3), vec![0, 1, 2, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn perturbation_respects_budgets(n in 20usize..80, d in 20usize..60, seed in any::<u64>(), protected_frac in 0.0f64..1.0) {
        let g = generate_synthetic(n, 2, d, 0.8, seed).unwrap();
        let protected = ((n as f64 * protected_frac) as usize).min(n - 1);
        let spec = PerturbationSpec::new(seed ^ 0xABCD);
        let (p, remap) = perturb(&g, &spec, protected).unwrap();
        prop_assert_eq!(p.num_features(), d);
        prop_assert!(remap.new_id(protected).is_some());
        prop_assert!(p.num_nodes() as f64 >= n as f64 * 0.95 - 1e-9);
        let budget = (0.05 * d as f64).ceil() as usize;
        for (new, &old) in remap.survivors().iter().enumerate() {
            prop_assert_eq!(remap.new_id(old), Some(new));
            prop_assert_eq!(p.labels()[new], g.labels()[old]);
            let hamming = g.features().row(old).iter().zip(p.features().row(new)).filter(|(a, b)| a != b).count();
            prop_assert!(hamming <= budget);
        }
        for &(u, v) in p.edges() {
            prop_assert!(g.has_edge(remap.old_id(u), remap.old_id(v)));
        }
    }

    #[test]
    fn split_partitions_every_node(n in 5usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let g = generate_synthetic(n, 1, 2, 0.5, 1).unwrap();
        let s = split(&g, frac, seed).unwrap();
        for i in 0..n {
            prop_assert!(s.train[i] != s.test[i]);
        }
        let expected = frac * n as f64;
        prop_assert!((s.train_nodes().len() as f64 - expected).abs() <= 1.0);
    }

    #[test]
    fn edges_are_canonical(pairs in proptest::collection::vec((0usize..12, 0usize..12), 0..40)) {
        let edges: Vec<(usize, usize)> = pairs.into_iter().filter(|(a, b)| a != b).collect();
        let g = Graph::new(Matrix::zeros(12, 1), edges.clone(), vec![0; 12], 1).unwrap();
        for w in g.edges().windows(2) {
            prop_assert!(w[0] < w[1]);
        }
        for &(u, v) in g.edges() {
            prop_assert!(u < v);
        }
        for (a, b) in edges {
            prop_assert!(g.has_edge(a, b) && g.has_edge(b, a));
        }
    }
}
