//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation applied to [`Tensor`] handles. Nodes
//! are appended in evaluation order, so walking the tape backwards is a valid
//! topological order and [`Tape::backward`] visits each node once.
//!
//! ```
//! use gnnbench_autodiff::{Matrix, Tape};
//!
//! let tape = Tape::new();
//! let w = tape.param(Matrix::scalar(3.0));
//! let loss = w.mul(w).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).item(), 6.0);
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::matrix::{CsrMatrix, Matrix, Shape};

/// Records a computation. Confined to one thread and one training step.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Rc<Matrix>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    LogSoftmax(usize),
    SoftmaxT(usize, f64),
    BatchNorm(usize, Rc<Vec<f64>>),
    Sum(usize),
    Mean(usize),
    L1(usize),
    L2Sq(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Rc<Vec<usize>>),
    ScatterAddRows(usize, Rc<Vec<usize>>),
    Nll(usize, Rc<Vec<usize>>, Rc<Vec<usize>>),
    Mse(usize, usize),
    BernoulliEntropy(usize, f64),
    SpMM(Rc<CsrMatrix>, usize),
    SegmentSoftmax(usize, Rc<Vec<usize>>, usize),
    SegmentNormalize(usize, Rc<Vec<usize>>, usize),
    ScatterEntries(usize, Rc<Vec<usize>>),
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Batch statistics produced by [`Tensor::batch_norm`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Matrix) -> Tensor<'_> {
        self.leaf_rc(Rc::new(value), true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Tensor<'_> {
        self.leaf_rc(Rc::new(value), false)
    }

    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Tensor<'_> {
        self.leaf_rc(Rc::new(value), requires_grad)
    }

    /// Shares an existing buffer as a leaf, avoiding a copy of large inputs.
    pub fn leaf_rc(&self, value: Rc<Matrix>, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Tensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Matrix, inputs: &[usize], op: Op) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        });
        Tensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Gradients of `loss` with respect to every tracked leaf.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(root.value.shape()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        if root.requires_grad {
            grads[loss.id] = Some(Matrix::scalar(1.0));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            propagate(&nodes, node, &g, &mut grads)?;
        }
        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of a backward pass; missing entries read as zeros.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, t: Tensor<'_>) -> Matrix {
        match self.grads.get(t.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[t.id];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, t: Tensor<'_>) -> Matrix {
        match self.grads.get_mut(t.id).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[t.id];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Matrix>], id: usize, g: Matrix) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn needs(nodes: &[Node], id: usize) -> bool {
    nodes[id].requires_grad
}

fn propagate(nodes: &[Node], node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            if needs(nodes, a) {
                accumulate(nodes, grads, a, g.matmul_t(&nodes[b].value)?);
            }
            if needs(nodes, b) {
                accumulate(nodes, grads, b, nodes[a].value.t_matmul(g)?);
            }
        }
        &Op::Add(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.clone());
        }
        &Op::Sub(a, b) => {
            accumulate(nodes, grads, a, g.clone());
            accumulate(nodes, grads, b, g.scaled(-1.0));
        }
        &Op::Mul(a, b) => {
            if needs(nodes, a) {
                accumulate(nodes, grads, a, g.zip_map(&nodes[b].value, |x, y| x * y));
            }
            if needs(nodes, b) {
                accumulate(nodes, grads, b, g.zip_map(&nodes[a].value, |x, y| x * y));
            }
        }
        &Op::AddRow(x, r) => {
            accumulate(nodes, grads, x, g.clone());
            if needs(nodes, r) {
                accumulate(nodes, grads, r, column_sums(g));
            }
        }
        &Op::MulRow(x, r) => {
            let rv = &nodes[r].value;
            if needs(nodes, x) {
                let mut dx = g.clone();
                for i in 0..dx.rows() {
                    for (d, s) in dx.row_mut(i).iter_mut().zip(rv.data()) {
                        *d *= s;
                    }
                }
                accumulate(nodes, grads, x, dx);
            }
            if needs(nodes, r) {
                accumulate(nodes, grads, r, column_sums(&g.zip_map(&nodes[x].value, |a, b| a * b)));
            }
        }
        &Op::MulCol(x, c) => {
            let cv = &nodes[c].value;
            let xv = &nodes[x].value;
            if needs(nodes, x) {
                let mut dx = g.clone();
                for i in 0..dx.rows() {
                    let s = cv.data()[i];
                    dx.row_mut(i).iter_mut().for_each(|d| *d *= s);
                }
                accumulate(nodes, grads, x, dx);
            }
            if needs(nodes, c) {
                let dc = (0..g.rows())
                    .map(|i| g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum())
                    .collect();
                accumulate(nodes, grads, c, Matrix::column(dc));
            }
        }
        &Op::Scale(x, s) => accumulate(nodes, grads, x, g.scaled(s)),
        &Op::Relu(x) => {
            let dx = g.zip_map(&nodes[x].value, |g, v| if v > 0.0 { g } else { 0.0 });
            accumulate(nodes, grads, x, dx);
        }
        &Op::LeakyRelu(x, slope) => {
            let dx = g.zip_map(&nodes[x].value, |g, v| if v > 0.0 { g } else { g * slope });
            accumulate(nodes, grads, x, dx);
        }
        &Op::Sigmoid(x) => accumulate(nodes, grads, x, g.zip_map(out, |g, y| g * y * (1.0 - y))),
        &Op::LogSoftmax(x) => {
            let mut dx = g.clone();
            for i in 0..dx.rows() {
                let total: f64 = g.row(i).iter().sum();
                for (d, &y) in dx.row_mut(i).iter_mut().zip(out.row(i)) {
                    *d -= y.exp() * total;
                }
            }
            accumulate(nodes, grads, x, dx);
        }
        &Op::SoftmaxT(x, t) => {
            let mut dx = g.clone();
            for i in 0..dx.rows() {
                let dot: f64 = g.row(i).iter().zip(out.row(i)).map(|(a, b)| a * b).sum();
                for (d, &y) in dx.row_mut(i).iter_mut().zip(out.row(i)) {
                    *d = y * (*d - dot) / t;
                }
            }
            accumulate(nodes, grads, x, dx);
        }
        Op::BatchNorm(x, inv_std) => {
            let n = out.rows() as f64;
            let sum_g = column_sums(g);
            let sum_gx = column_sums(&g.zip_map(out, |a, b| a * b));
            let mut dx = Matrix::zeros(out.rows(), out.cols());
            for i in 0..out.rows() {
                for j in 0..out.cols() {
                    let v = inv_std[j] / n
                        * (n * g.get(i, j) - sum_g.data()[j] - out.get(i, j) * sum_gx.data()[j]);
                    dx.set(i, j, v);
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        &Op::Sum(x) => {
            let (r, c) = nodes[x].value.shape();
            accumulate(nodes, grads, x, Matrix::filled(r, c, g.item()));
        }
        &Op::Mean(x) => {
            let (r, c) = nodes[x].value.shape();
            let len = (r * c).max(1) as f64;
            accumulate(nodes, grads, x, Matrix::filled(r, c, g.item() / len));
        }
        &Op::L1(x) => {
            let s = g.item();
            accumulate(nodes, grads, x, nodes[x].value.map(|v| s * sign(v)));
        }
        &Op::L2Sq(x) => {
            let s = g.item();
            accumulate(nodes, grads, x, nodes[x].value.scaled(2.0 * s));
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let cols = nodes[p].value.cols();
                if needs(nodes, p) {
                    let mut dp = Matrix::zeros(g.rows(), cols);
                    for i in 0..g.rows() {
                        dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                    }
                    accumulate(nodes, grads, p, dp);
                }
                offset += cols;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (rows, cols) = nodes[p].value.shape();
                if needs(nodes, p) {
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    accumulate(nodes, grads, p, Matrix::from_vec(rows, cols, slice)?);
                }
                offset += rows;
            }
        }
        Op::GatherRows(x, idx) => {
            let (r, c) = nodes[*x].value.shape();
            let mut dx = Matrix::zeros(r, c);
            for (e, &src) in idx.iter().enumerate() {
                for (d, &v) in dx.row_mut(src).iter_mut().zip(g.row(e)) {
                    *d += v;
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::ScatterAddRows(x, idx) => {
            let dx = g.select_rows(idx);
            accumulate(nodes, grads, *x, dx);
        }
        Op::Nll(x, rows, targets) => {
            let (r, c) = nodes[*x].value.shape();
            let mut dx = Matrix::zeros(r, c);
            let scale = g.item() / rows.len() as f64;
            for (&row, &t) in rows.iter().zip(targets.iter()) {
                dx.set(row, t, dx.get(row, t) - scale);
            }
            accumulate(nodes, grads, *x, dx);
        }
        &Op::Mse(a, b) => {
            let av = &nodes[a].value;
            let bv = &nodes[b].value;
            let s = 2.0 * g.item() / av.len().max(1) as f64;
            let da = av.zip_map(bv, |x, y| s * (x - y));
            if needs(nodes, b) {
                accumulate(nodes, grads, b, da.scaled(-1.0));
            }
            accumulate(nodes, grads, a, da);
        }
        &Op::BernoulliEntropy(x, eps) => {
            let dx = g.zip_map(&nodes[x].value, |g, p| {
                g * (-(p + eps).ln() - p / (p + eps) + (1.0 - p + eps).ln() + (1.0 - p) / (1.0 - p + eps))
            });
            accumulate(nodes, grads, x, dx);
        }
        Op::SpMM(a, x) => accumulate(nodes, grads, *x, a.t_mul_dense(g)?),
        Op::SegmentSoftmax(x, group, n_groups) => {
            let cols = out.cols();
            let mut dots = vec![0.0; n_groups * cols];
            for (e, &grp) in group.iter().enumerate() {
                for j in 0..cols {
                    dots[grp * cols + j] += g.get(e, j) * out.get(e, j);
                }
            }
            let mut dx = Matrix::zeros(out.rows(), cols);
            for (e, &grp) in group.iter().enumerate() {
                for j in 0..cols {
                    dx.set(e, j, out.get(e, j) * (g.get(e, j) - dots[grp * cols + j]));
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::SegmentNormalize(x, group, n_groups) => {
            let xv = &nodes[*x].value;
            let cols = out.cols();
            let mut sums = vec![0.0; n_groups * cols];
            let mut dots = vec![0.0; n_groups * cols];
            for (e, &grp) in group.iter().enumerate() {
                for j in 0..cols {
                    sums[grp * cols + j] += xv.get(e, j);
                    dots[grp * cols + j] += g.get(e, j) * out.get(e, j);
                }
            }
            let mut dx = Matrix::zeros(out.rows(), cols);
            for (e, &grp) in group.iter().enumerate() {
                for j in 0..cols {
                    let s = sums[grp * cols + j];
                    if s != 0.0 {
                        dx.set(e, j, (g.get(e, j) - dots[grp * cols + j]) / s);
                    }
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::ScatterEntries(x, positions) => {
            let dx = positions.iter().map(|&p| g.data()[p]).collect();
            accumulate(nodes, grads, *x, Matrix::column(dx));
        }
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    Matrix::row_vector(out)
}

fn check_same(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(AutodiffError::Shape { op, left: a, right: b });
    }
    Ok(())
}

fn check_index(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(AutodiffError::Index { op, index, bound }),
        None => Ok(()),
    }
}

impl<'t> Tensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, value: Matrix, op: Op) -> Tensor<'t> {
        self.tape.push(value, &[self.id], op)
    }

    pub fn matmul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, &[self.id, other.id], Op::MatMul(self.id, other.id)))
    }

    pub fn add(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same("add", a.shape(), b.shape())?;
        let v = a.zip_map(&b, |x, y| x + y);
        Ok(self.tape.push(v, &[self.id, other.id], Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same("sub", a.shape(), b.shape())?;
        let v = a.zip_map(&b, |x, y| x - y);
        Ok(self.tape.push(v, &[self.id, other.id], Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same("mul", a.shape(), b.shape())?;
        let v = a.zip_map(&b, |x, y| x * y);
        Ok(self.tape.push(v, &[self.id, other.id], Op::Mul(self.id, other.id)))
    }

    /// Adds a `1 × cols` row vector to every row.
    pub fn add_row(self, row: Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, r) = (self.value(), row.value());
        check_same("add_row", (1, a.cols()), r.shape())?;
        let mut v = (*a).clone();
        for i in 0..v.rows() {
            for (d, s) in v.row_mut(i).iter_mut().zip(r.data()) {
                *d += s;
            }
        }
        Ok(self.tape.push(v, &[self.id, row.id], Op::AddRow(self.id, row.id)))
    }

    /// Multiplies every row elementwise by a `1 × cols` row vector.
    pub fn mul_row(self, row: Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, r) = (self.value(), row.value());
        check_same("mul_row", (1, a.cols()), r.shape())?;
        let mut v = (*a).clone();
        for i in 0..v.rows() {
            for (d, s) in v.row_mut(i).iter_mut().zip(r.data()) {
                *d *= s;
            }
        }
        Ok(self.tape.push(v, &[self.id, row.id], Op::MulRow(self.id, row.id)))
    }

    /// Scales row `i` by entry `i` of a `rows × 1` column vector.
    pub fn mul_col(self, col: Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, c) = (self.value(), col.value());
        check_same("mul_col", (a.rows(), 1), c.shape())?;
        let mut v = (*a).clone();
        for i in 0..v.rows() {
            let s = c.data()[i];
            v.row_mut(i).iter_mut().for_each(|d| *d *= s);
        }
        Ok(self.tape.push(v, &[self.id, col.id], Op::MulCol(self.id, col.id)))
    }

    pub fn scale(self, s: f64) -> Tensor<'t> {
        let v = self.value().scaled(s);
        self.unary(v, Op::Scale(self.id, s))
    }

    pub fn relu(self) -> Tensor<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Tensor<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    pub fn sigmoid(self) -> Tensor<'t> {
        let v = self.value().map(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// Rowwise log-softmax.
    pub fn log_softmax(self) -> Tensor<'t> {
        let v = self.value().log_softmax_rows();
        self.unary(v, Op::LogSoftmax(self.id))
    }

    /// Rowwise `softmax(x / temperature)`.
    pub fn softmax_t(self, temperature: f64) -> Result<Tensor<'t>> {
        if !(temperature > 0.0) {
            return Err(AutodiffError::Contract(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let v = self.value().softmax_rows(temperature);
        Ok(self.unary(v, Op::SoftmaxT(self.id, temperature)))
    }

    /// Normalises each column over all rows with biased batch variance.
    /// Returns the normalised tensor and the statistics used.
    pub fn batch_norm(self, eps: f64) -> (Tensor<'t>, BatchStats) {
        let x = self.value();
        let (rows, cols) = x.shape();
        let n = rows.max(1) as f64;
        let mut mean = vec![0.0; cols];
        for i in 0..rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for i in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = (*x).clone();
        for i in 0..rows {
            for ((o, m), s) in out.row_mut(i).iter_mut().zip(&mean).zip(&inv_std) {
                *o = (*o - m) * s;
            }
        }
        let t = self.unary(out, Op::BatchNorm(self.id, Rc::new(inv_std)));
        (t, BatchStats { mean, var })
    }

    pub fn sum(self) -> Tensor<'t> {
        let v = Matrix::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Tensor<'t> {
        let x = self.value();
        let v = Matrix::scalar(x.sum() / x.len().max(1) as f64);
        self.unary(v, Op::Mean(self.id))
    }

    pub fn l1_norm(self) -> Tensor<'t> {
        let v = Matrix::scalar(self.value().data().iter().map(|v| v.abs()).sum());
        self.unary(v, Op::L1(self.id))
    }

    pub fn l2_norm_sq(self) -> Tensor<'t> {
        let v = Matrix::scalar(self.value().data().iter().map(|v| v * v).sum());
        self.unary(v, Op::L2Sq(self.id))
    }

    pub fn concat_cols(parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| AutodiffError::Contract("concat_cols of nothing".into()))?
            .tape;
        let values: Vec<Rc<Matrix>> = parts.iter().map(Tensor::value).collect();
        let refs: Vec<&Matrix> = values.iter().map(|v| v.as_ref()).collect();
        let v = Matrix::concat_cols(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(v, &ids, Op::ConcatCols(ids.clone())))
    }

    pub fn concat_rows(parts: &[Tensor<'t>]) -> Result<Tensor<'t>> {
        let tape = parts
            .first()
            .ok_or_else(|| AutodiffError::Contract("concat_rows of nothing".into()))?
            .tape;
        let values: Vec<Rc<Matrix>> = parts.iter().map(Tensor::value).collect();
        let refs: Vec<&Matrix> = values.iter().map(|v| v.as_ref()).collect();
        let v = Matrix::concat_rows(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(v, &ids, Op::ConcatRows(ids.clone())))
    }

    /// Output row `e` is input row `idx[e]`.
    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Result<Tensor<'t>> {
        let x = self.value();
        check_index("gather_rows", &idx, x.rows())?;
        let v = x.select_rows(&idx);
        Ok(self.unary(v, Op::GatherRows(self.id, idx)))
    }

    /// Sums input row `e` into output row `idx[e]` of an `n`-row result.
    pub fn scatter_add_rows(self, idx: Rc<Vec<usize>>, n: usize) -> Result<Tensor<'t>> {
        let x = self.value();
        if idx.len() != x.rows() {
            return Err(AutodiffError::shape("scatter_add_rows", x.shape(), (idx.len(), 1)));
        }
        check_index("scatter_add_rows", &idx, n)?;
        let mut v = Matrix::zeros(n, x.cols());
        for (e, &dst) in idx.iter().enumerate() {
            for (d, s) in v.row_mut(dst).iter_mut().zip(x.row(e)) {
                *d += s;
            }
        }
        Ok(self.unary(v, Op::ScatterAddRows(self.id, idx)))
    }

    /// Mean negative log-likelihood of `targets[i]` in row `rows[i]` of a
    /// log-probability matrix.
    pub fn nll_loss(self, rows: Rc<Vec<usize>>, targets: Rc<Vec<usize>>) -> Result<Tensor<'t>> {
        let x = self.value();
        if rows.len() != targets.len() || rows.is_empty() {
            return Err(AutodiffError::Contract(format!(
                "nll_loss needs matching non-empty rows/targets, got {} and {}",
                rows.len(),
                targets.len()
            )));
        }
        check_index("nll_loss", &rows, x.rows())?;
        check_index("nll_loss", &targets, x.cols())?;
        let total: f64 = rows.iter().zip(targets.iter()).map(|(&r, &t)| -x.get(r, t)).sum();
        let v = Matrix::scalar(total / rows.len() as f64);
        Ok(self.unary(v, Op::Nll(self.id, rows, targets)))
    }

    pub fn mse_loss(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, b) = (self.value(), other.value());
        check_same("mse_loss", a.shape(), b.shape())?;
        let total: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let v = Matrix::scalar(total / a.len().max(1) as f64);
        Ok(self.tape.push(v, &[self.id, other.id], Op::Mse(self.id, other.id)))
    }

    /// Elementwise `-p ln(p + eps) - (1 - p) ln(1 - p + eps)`.
    pub fn bernoulli_entropy(self, eps: f64) -> Tensor<'t> {
        let v = self
            .value()
            .map(|p| -p * (p + eps).ln() - (1.0 - p) * (1.0 - p + eps).ln());
        self.unary(v, Op::BernoulliEntropy(self.id, eps))
    }

    /// `a · self` for a fixed sparse matrix `a`.
    pub fn spmm(self, a: Rc<CsrMatrix>) -> Result<Tensor<'t>> {
        let v = a.mul_dense(&self.value())?;
        Ok(self.unary(v, Op::SpMM(a, self.id)))
    }

    /// Softmax over the rows sharing a group id, separately for each column.
    pub fn segment_softmax(self, group: Rc<Vec<usize>>, n_groups: usize) -> Result<Tensor<'t>> {
        let x = self.value();
        if group.len() != x.rows() {
            return Err(AutodiffError::shape("segment_softmax", x.shape(), (group.len(), 1)));
        }
        check_index("segment_softmax", &group, n_groups)?;
        let cols = x.cols();
        let mut max = vec![f64::NEG_INFINITY; n_groups * cols];
        for (e, &grp) in group.iter().enumerate() {
            for j in 0..cols {
                let m = &mut max[grp * cols + j];
                *m = m.max(x.get(e, j));
            }
        }
        let mut v = Matrix::zeros(x.rows(), cols);
        let mut sums = vec![0.0; n_groups * cols];
        for (e, &grp) in group.iter().enumerate() {
            for j in 0..cols {
                let ex = (x.get(e, j) - max[grp * cols + j]).exp();
                v.set(e, j, ex);
                sums[grp * cols + j] += ex;
            }
        }
        for (e, &grp) in group.iter().enumerate() {
            for j in 0..cols {
                v.set(e, j, v.get(e, j) / sums[grp * cols + j]);
            }
        }
        Ok(self.unary(v, Op::SegmentSoftmax(self.id, group, n_groups)))
    }

    /// Divides each row by the sum over its group (zero when the sum is zero).
    pub fn segment_normalize(self, group: Rc<Vec<usize>>, n_groups: usize) -> Result<Tensor<'t>> {
        let x = self.value();
        if group.len() != x.rows() {
            return Err(AutodiffError::shape("segment_normalize", x.shape(), (group.len(), 1)));
        }
        check_index("segment_normalize", &group, n_groups)?;
        let cols = x.cols();
        let mut sums = vec![0.0; n_groups * cols];
        for (e, &grp) in group.iter().enumerate() {
            for j in 0..cols {
                sums[grp * cols + j] += x.get(e, j);
            }
        }
        let mut v = Matrix::zeros(x.rows(), cols);
        for (e, &grp) in group.iter().enumerate() {
            for j in 0..cols {
                let s = sums[grp * cols + j];
                if s != 0.0 {
                    v.set(e, j, x.get(e, j) / s);
                }
            }
        }
        Ok(self.unary(v, Op::SegmentNormalize(self.id, group, n_groups)))
    }

    /// Places the entries of a `k × 1` column at distinct flat `positions`
    /// of an otherwise zero `shape` matrix.
    pub fn scatter_entries(self, positions: Rc<Vec<usize>>, shape: Shape) -> Result<Tensor<'t>> {
        let x = self.value();
        if x.shape() != (positions.len(), 1) {
            return Err(AutodiffError::shape("scatter_entries", x.shape(), (positions.len(), 1)));
        }
        check_index("scatter_entries", &positions, shape.0 * shape.1)?;
        let mut v = Matrix::zeros(shape.0, shape.1);
        for (k, &p) in positions.iter().enumerate() {
            v.data_mut()[p] = x.data()[k];
        }
        Ok(self.unary(v, Op::ScatterEntries(self.id, positions)))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
