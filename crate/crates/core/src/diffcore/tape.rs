//! Append-only Wengert tape over [`Matrix`] values.
//!
//! Every operation evaluates eagerly and pushes a node holding its output
//! and whatever the backward pass needs. Nodes only ever refer to earlier
//! nodes, so a reverse sweep over the node list is a valid topological
//! order. Parameter leaves remember their [`ParamId`]; `backward` adds the
//! gradient that reaches them into the owning [`ParamStore`], leaving the
//! accumulator to be cleared by the optimizer.

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Floor (and `1 - floor` ceiling) applied to probabilities before logs.
pub const PROB_EPS: f64 = 1e-12;

/// Reference to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LnClamped(Var),
    OneMinus(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    PickPerRow(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub(crate) fn softmax_rows_value(x: &Matrix) -> Matrix {
    let (rows, cols) = x.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= total;
        }
    }
    Matrix::from_parts(rows, cols, out)
}

fn affine_value(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    if x.cols() != w.rows() {
        return Err(Error::shape("affine", x.shape(), w.shape()));
    }
    if b.shape() != (1, w.cols()) {
        return Err(Error::shape("affine bias", w.shape(), b.shape()));
    }
    let mut out = x.matmul(w)?;
    let cols = out.cols();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        *v += b.as_slice()[i % cols];
    }
    Ok(out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Constant, m)
    }

    /// Leaf bound to a parameter; `backward` writes its gradient to `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.get(id).value.clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `x·w` with the 1×k row `b` added to every row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = affine_value(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Affine { x, w, b }, out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    /// Logistic function, clamped into `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows_value(self.value(x));
        self.push(Op::SoftmaxRows(x), out)
    }

    /// `ln(max(x, PROB_EPS))` elementwise.
    pub fn ln_clamped(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(PROB_EPS).ln());
        self.push(Op::LnClamped(x), out)
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 - v);
        self.push(Op::OneMinus(x), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", va.shape(), vb.shape()));
        }
        let out = va.zip_map(vb, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", va.shape(), vb.shape()));
        }
        let out = va.zip_map(vb, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(Op::Scale(x, k), out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        self.push(Op::Sum(x), out)
    }

    /// Mean over all entries. Errors on an empty matrix.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.rows() * v.cols();
        if n == 0 {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let out = Matrix::scalar(v.sum() / n as f64);
        Ok(self.push(Op::Mean(x), out))
    }

    /// Column vector holding `x[i, cols[i]]` for each row `i`.
    pub fn pick_per_row(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if cols.len() != v.rows() {
            return Err(Error::shape("pick_per_row", v.shape(), (cols.len(), 1)));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= v.cols()) {
            return Err(Error::contract(format!(
                "column {bad} out of range for {} columns",
                v.cols()
            )));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| v.get(r, c)).collect();
        let out = Matrix::from_parts(cols.len(), 1, data);
        Ok(self.push(Op::PickPerRow(x, cols.to_vec()), out))
    }

    /// For every ReLU node, whether each input entry is strictly positive.
    /// Two evaluations of the same graph with equal patterns lie on the same
    /// linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).as_slice().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    /// Reverse sweep from the scalar `loss`, adding d(loss)/d(param) into the
    /// `grad` of every parameter leaf reachable from it.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.get_mut(*id).grad.add_assign(&g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    let gb = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Affine { x, w, b } => {
                    let gx = g.matmul(&self.value(*w).transpose())?;
                    let gw = self.value(*x).transpose().matmul(&g)?;
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, Matrix::from_parts(1, cols, gb));
                }
                Op::Relu(x) => {
                    let gx = self.value(*x).zip_map(&g, |v, gv| if v > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = node.value.zip_map(&g, |s, gv| gv * s * (1.0 - s));
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let s = &node.value;
                    let (rows, cols) = s.shape();
                    let mut gx = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let (sr, gr) = (s.row(r), g.row(r));
                        let dot: f64 = sr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        gx.extend(sr.iter().zip(gr).map(|(si, gi)| si * (gi - dot)));
                    }
                    accumulate(&mut grads, *x, Matrix::from_parts(rows, cols, gx));
                }
                Op::LnClamped(x) => {
                    let gx = self
                        .value(*x)
                        .zip_map(&g, |v, gv| if v >= PROB_EPS { gv / v } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::OneMinus(x) => accumulate(&mut grads, *x, g.map(|v| -v)),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = self.value(*b).zip_map(&g, |v, gv| v * gv);
                    let gb = self.value(*a).zip_map(&g, |v, gv| v * gv);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, k) => accumulate(&mut grads, *x, g.map(|v| v * k)),
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.as_slice()[0]));
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    let n = (r * c) as f64;
                    accumulate(&mut grads, *x, Matrix::filled(r, c, g.as_slice()[0] / n));
                }
                Op::PickPerRow(x, cols) => {
                    let (r, c) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for (row, &col) in cols.iter().enumerate() {
                        gx.set(row, col, g.get(row, 0));
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Parameter;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn affine_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[vec![1.0, 1.0]]));
        let w = tape.constant(Matrix::identity(2));
        let b = tape.constant(m(&[vec![2.0, 3.0]]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y), &m(&[vec![3.0, 4.0]]));

        let x0 = tape.constant(Matrix::zeros(1, 2));
        let w2 = tape.constant(m(&[vec![0.3, -1.0], vec![7.0, 2.0]]));
        let y0 = tape.affine(x0, w2, b).unwrap();
        assert_eq!(tape.value(y0), &m(&[vec![2.0, 3.0]]));

        let xs = m(&[vec![0.5, -2.0], vec![4.0, 1.25]]);
        let x1 = tape.constant(xs.clone());
        let zb = tape.constant(Matrix::zeros(1, 2));
        let y1 = tape.affine(x1, w, zb).unwrap();
        assert_eq!(tape.value(y1), &xs);

        let bad_b = tape.constant(Matrix::zeros(1, 3));
        assert!(tape.affine(x, w, bad_b).is_err());
        let bad_w = tape.constant(Matrix::zeros(3, 2));
        assert!(tape.affine(x, bad_w, b).is_err());
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[vec![-0.5, 0.5, -3.0, 3.0]]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &m(&[vec![0.0, 0.5, 0.0, 3.0]]));
        let z = tape.constant(Matrix::zeros(2, 2));
        let y = tape.relu(z);
        assert_eq!(tape.value(y), &Matrix::zeros(2, 2));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[vec![0.0, 0.0, 0.0]]));
        let s = tape.softmax_rows(x);
        for &v in tape.value(s).as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        for c in [-5.0, 0.0, 17.25] {
            let x = tape.constant(m(&[vec![c, c + 2f64.ln()]]));
            let s = tape.softmax_rows(x);
            let got = tape.value(s);
            assert!((got.get(0, 0) - 1.0 / 3.0).abs() < 1e-12);
            assert!((got.get(0, 1) - 2.0 / 3.0).abs() < 1e-12);
        }
        let x = tape.constant(m(&[vec![1000.0, 0.0]]));
        let s = tape.softmax_rows(x);
        let got = tape.value(s);
        assert!((got.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((0.0..1e-15).contains(&got.get(0, 1)));
    }

    #[test]
    fn sigmoid_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[vec![0.0, 1000.0, -1000.0]]));
        let s = tape.sigmoid(x);
        let v = tape.value(s);
        assert_eq!(v.get(0, 0), 0.5);
        assert_eq!(v.get(0, 1), 1.0 - PROB_EPS);
        assert_eq!(v.get(0, 2), PROB_EPS);
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_w() {
        let mut store = ParamStore::new();
        let wv = m(&[vec![1.5, -2.0], vec![0.25, 3.0]]);
        let id = store.add(Parameter::new("w", wv.clone()));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad, wv.map(|v| 2.0 * v));
    }

    #[test]
    fn disconnected_param_gets_zero_grad() {
        let mut store = ParamStore::new();
        let a = store.add(Parameter::new("a", Matrix::filled(2, 2, 1.0)));
        let b = store.add(Parameter::new("b", Matrix::filled(2, 2, 3.0)));
        let mut tape = Tape::new();
        let va = tape.param(&store, a);
        let _vb = tape.param(&store, b);
        let loss = tape.sum(va);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(b).grad, Matrix::zeros(2, 2));
        assert_eq!(store.get(a).grad, Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 1));
        assert!(matches!(tape.backward(x, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut store = ParamStore::new();
        let id = store.add(Parameter::new("w", Matrix::filled(1, 3, 2.0)));
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let loss = tape.sum(w);
            tape.backward(loss, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad, Matrix::filled(1, 3, 2.0));
    }
}
