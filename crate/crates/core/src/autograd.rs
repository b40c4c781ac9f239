//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every differentiable expression is built through a [`Tape`]: forward
//! results are stored as nodes, and [`Tape::backward`] replays the recording
//! in reverse, applying each primitive's backward rule. Leaves registered via
//! [`Tape::param`] flush their accumulated gradients into the shared
//! [`Tensor`] buffers, so optimizers can read them afterwards.
//!
//! The tape is single-threaded by design; a training step builds one tape,
//! runs backward once (repeated calls accumulate into the parameters), and
//! drops it.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::tensor::{self, NumError, Tensor};

/// Shared handle to a trainable tensor. Training is single-threaded, so
/// `Rc<RefCell<_>>` is sufficient and keeps parameter updates in place.
pub type ParamRef = Rc<RefCell<Tensor>>;

/// Wraps a tensor into a fresh shared parameter handle.
pub fn param_ref(t: Tensor) -> ParamRef {
    Rc::new(RefCell::new(t.into_param()))
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    /// Sum of arbitrarily many same-shape terms; keeps wide loss
    /// aggregations to a single node.
    AddN(Vec<Var>),
    Scale(Var, f64),
    Tanh(Var),
    Abs(Var),
    Sqrt(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    SoftmaxCols(Var),
    Mean(Var),
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
    Row(Var, usize),
    CosineDistance(Var, Var),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// The computation record: an ordered list of primitive operations whose
/// reverse replay yields gradients for every `requires_grad` leaf.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Leaf node index -> external parameter to flush gradients into.
    params: Vec<(usize, ParamRef)>,
    /// Dedup map so registering the same parameter twice yields one leaf.
    param_ids: HashMap<*const RefCell<Tensor>, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, rg: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            grad: None,
            requires_grad: rg,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a constant leaf (no gradient).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), false, Op::Leaf)
    }

    /// 1x1 constant.
    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(1, 1, vec![v], false, Op::Leaf)
    }

    /// Registers a trainable parameter leaf. Gradients accumulated by
    /// `backward` are flushed into the parameter's own buffer. Registering
    /// the same handle again returns the existing leaf.
    pub fn param(&mut self, p: &ParamRef) -> Var {
        let key = Rc::as_ptr(p);
        if let Some(&v) = self.param_ids.get(&key) {
            return v;
        }
        let t = p.borrow();
        let var = self.push(
            t.rows(),
            t.cols(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        );
        drop(t);
        if self.nodes[var.0].requires_grad {
            self.params.push((var.0, Rc::clone(p)));
            self.param_ids.insert(key, var);
        }
        var
    }

    /// Registers the parameter's current value as a plain constant, so no
    /// gradient will flow into it from this tape.
    pub fn frozen_param(&mut self, p: &ParamRef) -> Var {
        let t = p.borrow();
        self.push(t.rows(), t.cols(), t.data().to_vec(), false, Op::Leaf)
    }

    /// Cuts the gradient flow: returns a constant leaf holding `v`'s value.
    pub fn detach(&mut self, v: Var) -> Var {
        let (rows, cols) = self.shape(v);
        let value = self.nodes[v.0].value.clone();
        self.push(rows, cols, value, false, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 node.
    pub fn value_scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    /// Gradient accumulated on a node by the most recent `backward` call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn tensor_view(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    // ── Recorded operations ──────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let ta = self.tensor_view(a);
        let tb = self.tensor_view(b);
        let out = tensor::matmul(&ta, &tb)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out.rows(), out.cols(), out.data().to_vec(), rg, Op::Matmul(a, b)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::DimMismatch {
                op: name,
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        let (rows, cols) = self.shape(a);
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(rows, cols, value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    /// Elementwise sum of all terms (at least one required).
    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var, NumError> {
        let first = *terms.first().ok_or(NumError::DimMismatch {
            op: "add_n",
            lhs: (0, 0),
            rhs: (0, 0),
        })?;
        let (rows, cols) = self.shape(first);
        let mut value = vec![0.0; rows * cols];
        let mut rg = false;
        for &t in terms {
            if self.shape(t) != (rows, cols) {
                return Err(NumError::DimMismatch {
                    op: "add_n",
                    lhs: (rows, cols),
                    rhs: self.shape(t),
                });
            }
            rg |= self.rg(t);
            for (acc, v) in value.iter_mut().zip(&self.nodes[t.0].value) {
                *acc += v;
            }
        }
        Ok(self.push(rows, cols, value, rg, Op::AddN(terms.to_vec())))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (rows, cols) = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(rows, cols, value, rg, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn softmax_cols(&mut self, a: Var) -> Var {
        let t = self.tensor_view(a);
        let out = tensor::softmax_cols(&t);
        let rg = self.rg(a);
        self.push(out.rows(), out.cols(), out.data().to_vec(), rg, Op::SoftmaxCols(a))
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1);
        let v = self.nodes[a.0].value.iter().sum::<f64>() / n as f64;
        let rg = self.rg(a);
        self.push(1, 1, vec![v], rg, Op::Mean(a))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.iter().sum::<f64>();
        let rg = self.rg(a);
        self.push(1, 1, vec![v], rg, Op::Sum(a))
    }

    /// Views the same row-major data under a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, NumError> {
        let elems = self.nodes[a.0].value.len();
        if rows * cols != elems {
            return Err(NumError::BadReshape {
                from: self.shape(a),
                to: (rows, cols),
                elems,
            });
        }
        let value = self.nodes[a.0].value.clone();
        let rg = self.rg(a);
        Ok(self.push(rows, cols, value, rg, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.tensor_view(a);
        let out = tensor::transpose(&t);
        let rg = self.rg(a);
        self.push(out.rows(), out.cols(), out.data().to_vec(), rg, Op::Transpose(a))
    }

    /// Extracts row `r` as a 1xcols node.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var, NumError> {
        let (rows, cols) = self.shape(a);
        if r >= rows {
            return Err(NumError::RowOutOfRange { row: r, rows });
        }
        let value = self.nodes[a.0].value[r * cols..(r + 1) * cols].to_vec();
        let rg = self.rg(a);
        Ok(self.push(1, cols, value, rg, Op::Row(a, r)))
    }

    /// Cosine distance between two vector-shaped nodes of equal length.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if !(ar == 1 || ac == 1) || !(br == 1 || bc == 1) {
            return Err(NumError::NotAVector {
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        if ar * ac != br * bc {
            return Err(NumError::DimMismatch {
                op: "cosine_distance",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let d = tensor::cosine_distance_value(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(1, 1, vec![d], rg, Op::CosineDistance(a, b)))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every `requires_grad` leaf bound to
    /// a parameter receives its accumulated gradient; calling `backward`
    /// again (without zeroing the parameters) accumulates on top.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(NumError::NonScalarLoss { shape });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(i, &g);
            self.nodes[i].grad = Some(g);
        }
        for (idx, p) in &self.params {
            if let Some(g) = &self.nodes[*idx].grad {
                p.borrow_mut().accumulate_grad(g);
            }
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        // Operands always precede their result on the tape.
        let (head, tail) = self.nodes.split_at_mut(i);
        let node = &tail[0];

        fn take_grad(head: &mut [Node], v: Var) -> Vec<f64> {
            head[v.0]
                .grad
                .take()
                .unwrap_or_else(|| vec![0.0; head[v.0].value.len()])
        }
        fn needs(head: &[Node], v: Var) -> bool {
            head[v.0].requires_grad
        }

        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, p) = (head[a.0].rows, head[a.0].cols);
                let n = head[b.0].cols;
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    // dA += g · Bᵀ
                    tensor::gemm_into(m, n, p, 1.0, g, false, &head[b.0].value, true, 1.0, &mut ga);
                    head[a.0].grad = Some(ga);
                }
                if needs(head, *b) {
                    let mut gb = take_grad(head, *b);
                    // dB += Aᵀ · g
                    tensor::gemm_into(p, m, n, 1.0, &head[a.0].value, true, g, false, 1.0, &mut gb);
                    head[b.0].grad = Some(gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(head, v) {
                        let mut gv = take_grad(head, v);
                        for (o, &x) in gv.iter_mut().zip(g) {
                            *o += x;
                        }
                        head[v.0].grad = Some(gv);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                    head[a.0].grad = Some(ga);
                }
                if needs(head, *b) {
                    let mut gb = take_grad(head, *b);
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o -= x;
                    }
                    head[b.0].grad = Some(gb);
                }
            }
            Op::Hadamard(a, b) => {
                let (a, b) = (*a, *b);
                if needs(head, a) {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(&head[b.0].value)
                        .map(|(&gi, &bv)| gi * bv)
                        .collect();
                    let mut ga = take_grad(head, a);
                    for (o, c) in ga.iter_mut().zip(&contrib) {
                        *o += c;
                    }
                    head[a.0].grad = Some(ga);
                }
                if needs(head, b) {
                    let contrib: Vec<f64> = g
                        .iter()
                        .zip(&head[a.0].value)
                        .map(|(&gi, &av)| gi * av)
                        .collect();
                    let mut gb = take_grad(head, b);
                    for (o, c) in gb.iter_mut().zip(&contrib) {
                        *o += c;
                    }
                    head[b.0].grad = Some(gb);
                }
            }
            Op::AddN(terms) => {
                for &v in terms {
                    if needs(head, v) {
                        let mut gv = take_grad(head, v);
                        for (o, &x) in gv.iter_mut().zip(g) {
                            *o += x;
                        }
                        head[v.0].grad = Some(gv);
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += c * x;
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Tanh(a) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += x * (1.0 - y * y);
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Abs(a) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(&head[a.0].value) {
                        // Subgradient 0 at the kink.
                        *o += x * if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Sqrt(a) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(&node.value) {
                        *o += x * 0.5 / y;
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Ln(a) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(&head[a.0].value) {
                        *o += x / v;
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Clamp(a, lo, hi) => {
                if needs(head, *a) {
                    let (lo, hi) = (*lo, *hi);
                    let mut ga = take_grad(head, *a);
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(&head[a.0].value) {
                        if v >= lo && v <= hi {
                            *o += x;
                        }
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::SoftmaxCols(a) => {
                if needs(head, *a) {
                    let (rows, cols) = (node.rows, node.cols);
                    let y = &node.value;
                    let mut ga = take_grad(head, *a);
                    for c in 0..cols {
                        let mut dot = 0.0;
                        for r in 0..rows {
                            dot += g[r * cols + c] * y[r * cols + c];
                        }
                        for r in 0..rows {
                            let idx = r * cols + c;
                            ga[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Mean(a) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    let n = ga.len().max(1) as f64;
                    let x = g[0] / n;
                    for o in ga.iter_mut() {
                        *o += x;
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Sum(a) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Reshape(a) => {
                if needs(head, *a) {
                    let mut ga = take_grad(head, *a);
                    for (o, &x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Transpose(a) => {
                if needs(head, *a) {
                    let (rows, cols) = (head[a.0].rows, head[a.0].cols);
                    let mut ga = take_grad(head, *a);
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += g[c * rows + r];
                        }
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::Row(a, r) => {
                if needs(head, *a) {
                    let cols = head[a.0].cols;
                    let mut ga = take_grad(head, *a);
                    for (c, &x) in g.iter().enumerate() {
                        ga[r * cols + c] += x;
                    }
                    head[a.0].grad = Some(ga);
                }
            }
            Op::CosineDistance(a, b) => {
                let (a, b) = (*a, *b);
                let g0 = g[0];
                let (dot, na2, nb2) =
                    tensor::dot_and_norms_sq(&head[a.0].value, &head[b.0].value);
                let denom = (na2 * nb2).sqrt();
                let cos = (dot / denom).clamp(-1.0, 1.0);
                if needs(head, a) {
                    let contrib: Vec<f64> = head[a.0]
                        .value
                        .iter()
                        .zip(&head[b.0].value)
                        .map(|(&av, &bv)| g0 * (cos * av / na2 - bv / denom))
                        .collect();
                    let mut ga = take_grad(head, a);
                    for (o, c) in ga.iter_mut().zip(&contrib) {
                        *o += c;
                    }
                    head[a.0].grad = Some(ga);
                }
                if needs(head, b) {
                    let contrib: Vec<f64> = head[b.0]
                        .value
                        .iter()
                        .zip(&head[a.0].value)
                        .map(|(&bv, &av)| g0 * (cos * bv / nb2 - av / denom))
                        .collect();
                    let mut gb = take_grad(head, b);
                    for (o, c) in gb.iter_mut().zip(&contrib) {
                        *o += c;
                    }
                    head[b.0].grad = Some(gb);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_backward_is_all_ones() {
        let mut tape = Tape::new();
        let p = param_ref(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let x = tape.param(&p);
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(p.borrow().grad().unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn repeated_backward_doubles_leaf_grads() {
        let mut tape = Tape::new();
        let p = param_ref(Tensor::row_vector(vec![0.5, -1.5, 2.0]));
        let x = tape.param(&p);
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let once: Vec<f64> = p.borrow().grad().unwrap().to_vec();
        tape.backward(loss).unwrap();
        let twice: Vec<f64> = p.borrow().grad().unwrap().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(2, 2));
        assert!(matches!(
            tape.backward(x),
            Err(NumError::NonScalarLoss { shape: (2, 2) })
        ));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let p = param_ref(Tensor::row_vector(vec![1.0, 2.0]));
        let x = tape.param(&p);
        let cut = tape.detach(x);
        let loss = tape.sum(cut);
        tape.backward(loss).unwrap();
        assert_eq!(p.borrow().grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_linearity_over_loss_sum() {
        // Gradient of (l1 + l2) equals grad(l1) + grad(l2).
        let build = |tape: &mut Tape, p: &ParamRef| -> (Var, Var) {
            let x = tape.param(p);
            let t = tape.tanh(x);
            let l1 = tape.sum(t);
            let sq = tape.hadamard(x, x).unwrap();
            let l2 = tape.mean(sq);
            (l1, l2)
        };
        let values = Tensor::row_vector(vec![0.3, -0.8, 1.2]);

        let p = param_ref(values.clone());
        let mut tape = Tape::new();
        let (l1, l2) = build(&mut tape, &p);
        let total = tape.add(l1, l2).unwrap();
        tape.backward(total).unwrap();
        let combined: Vec<f64> = p.borrow().grad().unwrap().to_vec();

        let q = param_ref(values);
        let mut t1 = Tape::new();
        let (l1, _) = build(&mut t1, &q);
        t1.backward(l1).unwrap();
        let mut t2 = Tape::new();
        let (_, l2) = build(&mut t2, &q);
        t2.backward(l2).unwrap();
        let summed: Vec<f64> = q.borrow().grad().unwrap().to_vec();

        for (a, b) in combined.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn matmul_backward_by_hand() {
        // loss = sum(a·b), a = [[1,2]], b = [[3],[4]]
        let mut tape = Tape::new();
        let a = param_ref(Tensor::row_vector(vec![1.0, 2.0]));
        let b = param_ref(Tensor::new(2, 1, vec![3.0, 4.0]).unwrap());
        let av = tape.param(&a);
        let bv = tape.param(&b);
        let prod = tape.matmul(av, bv).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        assert_eq!(a.borrow().grad().unwrap(), &[3.0, 4.0]);
        assert_eq!(b.borrow().grad().unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn reshape_incompatible_is_error() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(2, 3));
        assert!(tape.reshape(x, 4, 2).is_err());
    }

    #[test]
    fn row_gradient_scatters() {
        let mut tape = Tape::new();
        let p = param_ref(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let x = tape.param(&p);
        let r1 = tape.row(x, 1).unwrap();
        let loss = tape.sum(r1);
        tape.backward(loss).unwrap();
        assert_eq!(p.borrow().grad().unwrap(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
