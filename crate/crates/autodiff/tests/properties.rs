use gnnbench_autodiff::{Matrix, Tape};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn shaped() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in shaped(), t in 0.5f64..8.0) {
        let tape = Tape::new();
        let p = tape.constant(x).softmax_t(t).unwrap().value();
        for r in 0..p.rows() {
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(r).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn gradient_of_a_linear_form_is_its_coefficients(x in shaped(), k in -4.0f64..4.0) {
        let tape = Tape::new();
        let w = tape.param(x);
        let grads = tape.backward(w.scale(k).sum()).unwrap();
        prop_assert!(grads.get(w).data().iter().all(|g| *g == k));
    }

    #[test]
    fn gradients_accumulate_over_reuse(x in shaped()) {
        // d/dx sum(x + x + x) is 3 everywhere.
        let tape = Tape::new();
        let w = tape.param(x);
        let y = w.add(w).unwrap().add(w).unwrap();
        let grads = tape.backward(y.sum()).unwrap();
        prop_assert!(grads.get(w).data().iter().all(|g| *g == 3.0));
    }

    #[test]
    fn transpose_products_agree(a in matrix(3, 4), b in matrix(3, 2), c in matrix(5, 4)) {
        let direct = a.transpose().matmul(&b).unwrap();
        prop_assert_eq!(a.t_matmul(&b).unwrap(), direct);
        let direct = a.matmul(&c.transpose()).unwrap();
        let fused = a.matmul_t(&c).unwrap();
        for (x, y) in fused.data().iter().zip(direct.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
