//! Central finite-difference oracle for every tape primitive.
//!
//! Each case draws random inputs, reduces the primitive's output to a scalar
//! through a fixed random projection, and compares the tape's gradient for
//! each input with `(f(x + h) - f(x - h)) / 2h`.

use std::rc::Rc;

use gnnbench_autodiff::{CsrMatrix, Matrix, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const MAX_REL_ERR: f64 = 1e-4;

type Build = for<'t> fn(&'t Tape, &[Tensor<'t>], &Aux) -> Tensor<'t>;

/// Fixed (non-differentiated) data a case needs besides its inputs.
#[derive(Default, Clone)]
pub struct Aux {
    pub index: Rc<Vec<usize>>,
    pub index2: Rc<Vec<usize>>,
    pub groups: usize,
    pub sparse: Option<Rc<CsrMatrix>>,
    pub shape: (usize, usize),
}

pub struct Case {
    pub inputs: Vec<Matrix>,
    pub aux: Aux,
    pub build: Build,
}

pub struct OpSpec {
    pub name: &'static str,
    pub make: fn(&mut ChaCha8Rng) -> Case,
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn rand_range(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..6), rng.random_range(1..6))
}

fn unary(inputs: Vec<Matrix>, build: Build) -> Case {
    Case {
        inputs,
        aux: Aux::default(),
        build,
    }
}

pub fn op_specs() -> Vec<OpSpec> {
    vec![
        OpSpec {
            name: "matmul",
            make: |rng| {
                let (r, k) = dims(rng);
                let c = rng.random_range(1..6);
                unary(vec![rand_matrix(rng, r, k), rand_matrix(rng, k, c)], |_, x, _| {
                    x[0].matmul(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "add",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, r, c)], |_, x, _| {
                    x[0].add(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "sub",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, r, c)], |_, x, _| {
                    x[0].sub(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "elementwise-mul",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, r, c)], |_, x, _| {
                    x[0].mul(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "scalar-mul",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].scale(-1.7))
            },
        },
        OpSpec {
            name: "add-row",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, 1, c)], |_, x, _| {
                    x[0].add_row(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "mul-row",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, 1, c)], |_, x, _| {
                    x[0].mul_row(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "mul-col",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, r, 1)], |_, x, _| {
                    x[0].mul_col(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "relu",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_away_from_zero(rng, r, c)], |_, x, _| x[0].relu())
            },
        },
        OpSpec {
            name: "leaky-relu",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_away_from_zero(rng, r, c)], |_, x, _| x[0].leaky_relu(0.2))
            },
        },
        OpSpec {
            name: "sigmoid",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].sigmoid())
            },
        },
        OpSpec {
            name: "log-softmax",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].log_softmax())
            },
        },
        OpSpec {
            name: "softmax-with-temperature",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].softmax_t(5.0).unwrap())
            },
        },
        OpSpec {
            name: "batch-norm",
            make: |rng| {
                let r = rng.random_range(2..7);
                let c = rng.random_range(1..5);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].batch_norm(1e-5).0)
            },
        },
        OpSpec {
            name: "sum",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].sum())
            },
        },
        OpSpec {
            name: "mean",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].mean())
            },
        },
        OpSpec {
            name: "l1-norm",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_away_from_zero(rng, r, c)], |_, x, _| x[0].l1_norm())
            },
        },
        OpSpec {
            name: "l2-norm-squared",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c)], |_, x, _| x[0].l2_norm_sq())
            },
        },
        OpSpec {
            name: "concat-cols",
            make: |rng| {
                let (r, c) = dims(rng);
                let c2 = rng.random_range(1..4);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, r, c2)], |_, x, _| {
                    Tensor::concat_cols(&[x[0], x[1]]).unwrap()
                })
            },
        },
        OpSpec {
            name: "concat-rows",
            make: |rng| {
                let (r, c) = dims(rng);
                let r2 = rng.random_range(1..4);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, r2, c)], |_, x, _| {
                    Tensor::concat_rows(&[x[0], x[1]]).unwrap()
                })
            },
        },
        OpSpec {
            name: "row-gather",
            make: |rng| {
                let (r, c) = dims(rng);
                let k = rng.random_range(1..8);
                let idx = (0..k).map(|_| rng.random_range(0..r)).collect();
                Case {
                    inputs: vec![rand_matrix(rng, r, c)],
                    aux: Aux {
                        index: Rc::new(idx),
                        ..Aux::default()
                    },
                    build: |_, x, aux| x[0].gather_rows(aux.index.clone()).unwrap(),
                }
            },
        },
        OpSpec {
            name: "scatter-add-rows",
            make: |rng| {
                let (r, c) = dims(rng);
                let n = rng.random_range(1..5);
                let idx = (0..r).map(|_| rng.random_range(0..n)).collect();
                Case {
                    inputs: vec![rand_matrix(rng, r, c)],
                    aux: Aux {
                        index: Rc::new(idx),
                        groups: n,
                        ..Aux::default()
                    },
                    build: |_, x, aux| x[0].scatter_add_rows(aux.index.clone(), aux.groups).unwrap(),
                }
            },
        },
        OpSpec {
            name: "nll-loss",
            make: |rng| {
                let (r, c) = dims(rng);
                let k = rng.random_range(1..=r);
                let rows = (0..k).map(|_| rng.random_range(0..r)).collect();
                let targets = (0..k).map(|_| rng.random_range(0..c)).collect();
                Case {
                    inputs: vec![rand_matrix(rng, r, c)],
                    aux: Aux {
                        index: Rc::new(rows),
                        index2: Rc::new(targets),
                        ..Aux::default()
                    },
                    build: |_, x, aux| {
                        x[0].log_softmax()
                            .nll_loss(aux.index.clone(), aux.index2.clone())
                            .unwrap()
                    },
                }
            },
        },
        OpSpec {
            name: "mse-loss",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_matrix(rng, r, c), rand_matrix(rng, r, c)], |_, x, _| {
                    x[0].mse_loss(x[1]).unwrap()
                })
            },
        },
        OpSpec {
            name: "entropy-of-bernoulli",
            make: |rng| {
                let (r, c) = dims(rng);
                unary(vec![rand_range(rng, r, c, 0.05, 0.95)], |_, x, _| {
                    x[0].bernoulli_entropy(1e-15)
                })
            },
        },
        OpSpec {
            name: "spmm",
            make: |rng| {
                let (n, c) = dims(rng);
                let m = rng.random_range(1..6);
                let nnz = rng.random_range(1..10);
                let trip: Vec<(usize, usize, f64)> = (0..nnz)
                    .map(|_| (rng.random_range(0..m), rng.random_range(0..n), rng.random_range(-1.0..1.0)))
                    .collect();
                Case {
                    inputs: vec![rand_matrix(rng, n, c)],
                    aux: Aux {
                        sparse: Some(Rc::new(CsrMatrix::from_triplets(m, n, &trip))),
                        ..Aux::default()
                    },
                    build: |_, x, aux| x[0].spmm(aux.sparse.clone().unwrap()).unwrap(),
                }
            },
        },
        OpSpec {
            name: "segment-softmax",
            make: |rng| {
                let (r, c) = dims(rng);
                let n = rng.random_range(1..4);
                let idx = (0..r).map(|_| rng.random_range(0..n)).collect();
                Case {
                    inputs: vec![rand_matrix(rng, r, c)],
                    aux: Aux {
                        index: Rc::new(idx),
                        groups: n,
                        ..Aux::default()
                    },
                    build: |_, x, aux| x[0].segment_softmax(aux.index.clone(), aux.groups).unwrap(),
                }
            },
        },
        OpSpec {
            name: "segment-normalize",
            make: |rng| {
                let (r, c) = dims(rng);
                let n = rng.random_range(1..4);
                let idx = (0..r).map(|_| rng.random_range(0..n)).collect();
                Case {
                    inputs: vec![rand_range(rng, r, c, 0.5, 2.0)],
                    aux: Aux {
                        index: Rc::new(idx),
                        groups: n,
                        ..Aux::default()
                    },
                    build: |_, x, aux| x[0].segment_normalize(aux.index.clone(), aux.groups).unwrap(),
                }
            },
        },
        OpSpec {
            name: "scatter-entries",
            make: |rng| {
                let (r, c) = dims(rng);
                let mut positions: Vec<usize> = (0..r * c).filter(|_| rng.random_bool(0.6)).collect();
                if positions.is_empty() {
                    positions.push(0);
                }
                let k = positions.len();
                Case {
                    inputs: vec![rand_matrix(rng, k, 1)],
                    aux: Aux {
                        index: Rc::new(positions),
                        shape: (r, c),
                        ..Aux::default()
                    },
                    build: |_, x, aux| x[0].scatter_entries(aux.index.clone(), aux.shape).unwrap(),
                }
            },
        },
    ]
}

/// Scalar objective `sum(op(inputs) ⊙ projection)`.
fn objective(case: &Case, inputs: &[Matrix], projection: &Matrix) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Tensor<'_>> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
    let out = (case.build)(&tape, &vars, &case.aux).value();
    out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over the inputs of one randomized case.
pub fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Tensor<'_>> = case.inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = (case.build)(&tape, &vars, &case.aux);
    let (r, c) = out.shape();
    let projection = rand_matrix(rng, r, c);
    let loss = out.mul(tape.constant(projection.clone())).unwrap().sum();
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        let mut numeric = Matrix::zeros(analytic.rows(), analytic.cols());
        for k in 0..analytic.len() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[k] -= FD_STEP;
            numeric.data_mut()[k] =
                (objective(case, &plus, &projection) - objective(case, &minus, &projection)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.norm_l2().max(numeric.norm_l2()).max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Runs `trials` random cases of one op and returns the worst error seen.
pub fn check_op(spec: &OpSpec, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let case = (spec.make)(&mut rng);
            check_case(&case, &mut rng)
        })
        .fold(0.0, f64::max)
}
