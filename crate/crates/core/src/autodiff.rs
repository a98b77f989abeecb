//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records primitive operations in evaluation order; each
//! operation's value is computed eagerly. [`Tape::backward`] replays the
//! record in reverse exactly once and returns the gradient of a scalar loss
//! with respect to every recorded node.

use std::borrow::Cow;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::Matrix;

/// Forward-pass mode; dropout is active only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for instrumentation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Spmm,
    MatMul,
    MatMulBt,
    AddRow,
    Add,
    Relu,
    MaskMul,
    GatherRows,
    Concat,
    LeadingCols,
    CrossEntropy,
    SumSquares,
    Scale,
    WeightedSqDiff,
    Distill,
}

enum Op<'a> {
    Leaf,
    Spmm(Var, &'a NormalizedAdjacency),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    MaskMul(Var, Matrix),
    GatherRows(Var, Vec<usize>),
    Concat(Vec<Var>),
    LeadingCols(Var),
    CrossEntropy {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<usize>,
        probs: Matrix,
    },
    SumSquares(Var),
    Scale(Var, f64),
    WeightedSqDiff {
        param: Var,
        anchor: Vec<f64>,
        weights: Vec<f64>,
    },
    Distill {
        logits: Var,
        target: Matrix,
        student: Matrix,
        temperature: f64,
    },
}

impl Op<'_> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Spmm(..) => OpKind::Spmm,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulBt(..) => OpKind::MatMulBt,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Add(..) => OpKind::Add,
            Op::Relu(..) => OpKind::Relu,
            Op::MaskMul(..) => OpKind::MaskMul,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::Concat(..) => OpKind::Concat,
            Op::LeadingCols(..) => OpKind::LeadingCols,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::SumSquares(..) => OpKind::SumSquares,
            Op::Scale(..) => OpKind::Scale,
            Op::WeightedSqDiff { .. } => OpKind::WeightedSqDiff,
            Op::Distill { .. } => OpKind::Distill,
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op<'a>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn log_softmax_row(z: &[f64], temperature: f64, out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let mut sum = 0.0;
    for &v in z {
        sum += (v / temperature - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v / temperature - lse;
    }
}

/// Row-wise softmax of `z / temperature`.
pub fn softmax(z: &Matrix, temperature: f64) -> Matrix {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for r in 0..z.rows() {
        log_softmax_row(z.row(r), temperature, out.row_mut(r));
        for v in out.row_mut(r) {
            *v = v.exp();
        }
    }
    out
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A borrowed constant leaf.
    pub fn constant_ref(&mut self, value: &'a Matrix) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn spmm(&mut self, adj: &'a NormalizedAdjacency, x: Var) -> Result<Var> {
        let v = adj.spmm(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Spmm(x, adj), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::MatMulBt(a, b), ng))
    }

    /// Adds the 1×c row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (o, b) in v.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(v, Op::AddRow(a, bias), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut v = av.clone();
        v.add_assign(bv);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != mask.shape() {
            return Err(Error::shape("mask_mul", format!("{:?} vs {:?}", av.shape(), mask.shape())));
        }
        let mut v = av.clone();
        for (o, m) in v.data_mut().iter_mut().zip(mask.data()) {
            *o *= m;
        }
        let ng = self.ng(a);
        Ok(self.push(v, Op::MaskMul(a, mask), ng))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {}", av.rows())));
        }
        let v = av.gather_rows(&idx);
        let ng = self.ng(a);
        Ok(self.push(v, Op::GatherRows(a, idx), ng))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hcat(&mats)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(v, Op::Concat(parts.to_vec()), ng))
    }

    pub fn leading_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if cols > av.cols() {
            return Err(Error::shape("leading_cols", format!("{cols} of {}", av.cols())));
        }
        let v = av.leading_cols(cols);
        let ng = self.ng(a);
        Ok(self.push(v, Op::LeadingCols(a), ng))
    }

    /// Mean cross-entropy of `logits[rows[k]]` against `labels[k]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, rows: Vec<usize>, labels: Vec<usize>) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if rows.len() != labels.len() {
            return Err(Error::shape("cross_entropy", "rows and labels differ in length"));
        }
        let z = self.value(logits);
        let c = z.cols();
        let mut probs = Matrix::zeros(rows.len(), c);
        let mut loss = 0.0;
        for (k, (&r, &y)) in rows.iter().zip(&labels).enumerate() {
            if r >= z.rows() {
                return Err(Error::shape("cross_entropy", format!("row {r} of {}", z.rows())));
            }
            if y >= c {
                return Err(Error::LabelOutOfRange { label: y, classes: c });
            }
            let out = probs.row_mut(k);
            log_softmax_row(z.row(r), 1.0, out);
            loss -= out[y];
            for v in out.iter_mut() {
                *v = v.exp();
            }
        }
        loss /= rows.len() as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                rows,
                labels,
                probs,
            },
            ng,
        ))
    }

    /// Mean cross-entropy over rows whose mask entry is set.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var> {
        let n = self.value(logits).rows();
        if labels.len() != n || mask.len() != n {
            return Err(Error::shape("cross_entropy", "labels/mask length must equal row count"));
        }
        let rows: Vec<usize> = (0..n).filter(|&r| mask[r]).collect();
        let labels = rows.iter().map(|&r| labels[r]).collect();
        self.cross_entropy_rows(logits, rows, labels)
    }

    /// `Σ a²`.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        let ng = self.ng(a);
        self.push(Matrix::scalar(s), Op::SumSquares(a), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    /// `Σ_i w_i (θ_i − θ*_i)²` over the first `anchor.len()` entries of `param`.
    pub fn weighted_sq_diff(&mut self, param: Var, anchor: Vec<f64>, weights: Vec<f64>) -> Result<Var> {
        let pv = self.value(param);
        if anchor.len() != weights.len() || anchor.len() > pv.len() {
            return Err(Error::shape(
                "weighted_sq_diff",
                format!("anchor {} weights {} param {}", anchor.len(), weights.len(), pv.len()),
            ));
        }
        let mut s = 0.0;
        for ((p, a), w) in pv.data().iter().zip(&anchor).zip(&weights) {
            let d = p - a;
            s += w * d * d;
        }
        let ng = self.ng(param);
        Ok(self.push(
            Matrix::scalar(s),
            Op::WeightedSqDiff {
                param,
                anchor,
                weights,
            },
            ng,
        ))
    }

    /// Mean over rows of `KL(target ‖ softmax(logits / T))`; `target` rows are
    /// probability vectors. Its gradient equals that of the softened
    /// cross-entropy against `target`.
    pub fn distill(&mut self, logits: Var, target: Matrix, temperature: f64) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(Error::shape("distill", format!("{:?} vs {:?}", z.shape(), target.shape())));
        }
        if z.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut student = Matrix::zeros(z.rows(), z.cols());
        let mut loss = 0.0;
        for r in 0..z.rows() {
            let logq = student.row_mut(r);
            log_softmax_row(z.row(r), temperature, logq);
            for (c, lq) in logq.iter_mut().enumerate() {
                let p = target.get(r, c);
                if p > 0.0 {
                    loss += p * (p.ln() - *lq);
                }
                *lq = lq.exp();
            }
        }
        loss /= z.rows() as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::Distill {
                logits,
                target,
                student,
                temperature,
            },
            ng,
        ))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 − rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.value(a).shape();
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..r * c)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mask_mul(a, Matrix::from_vec(r, c, mask)?)
    }

    /// Scalar sum of several scalars.
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let mut acc = *terms.first().ok_or(Error::Empty("sum of no terms"))?;
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Backpropagates from the scalar `loss`. May run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        if loss.0 >= self.nodes.len() || self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::NotScalar);
        }
        self.consumed = true;
        let shapes: Vec<_> = self.nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                // leaf gradients stay in place
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let ng = |v: Var| self.nodes[v.0].needs_grad;
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Spmm(x, adj) => {
                    // Â is symmetric
                    acc(&mut grads, *x, adj.spmm(&g)?);
                }
                Op::MatMul(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.matmul_bt(val(*b))?);
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, val(*a).matmul_at(&g)?);
                    }
                }
                Op::MatMulBt(a, b) => {
                    if ng(*a) {
                        acc(&mut grads, *a, g.matmul(val(*b))?);
                    }
                    if ng(*b) {
                        acc(&mut grads, *b, g.matmul_at(val(*a))?);
                    }
                }
                Op::AddRow(a, bias) => {
                    if ng(*bias) {
                        let mut gb = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        acc(&mut grads, *bias, gb);
                    }
                    if ng(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if ng(*a) && ng(*b) {
                        acc(&mut grads, *a, g.clone());
                        acc(&mut grads, *b, g);
                    } else if ng(*a) {
                        acc(&mut grads, *a, g);
                    } else {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (o, &y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *o = 0.0;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaskMul(a, mask) => {
                    let mut ga = g;
                    for (o, m) in ga.data_mut().iter_mut().zip(mask.data()) {
                        *o *= m;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = shapes[a.0];
                    let mut ga = Matrix::zeros(r, c);
                    for (o, &src) in idx.iter().enumerate() {
                        for (d, v) in ga.row_mut(src).iter_mut().zip(g.row(o)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = shapes[p.0];
                        if ng(p) {
                            let mut gp = Matrix::zeros(r, c);
                            for row in 0..r {
                                gp.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                            }
                            acc(&mut grads, p, gp);
                        }
                        off += c;
                    }
                }
                Op::LeadingCols(a) => {
                    let (r, c) = shapes[a.0];
                    let mut ga = Matrix::zeros(r, c);
                    for row in 0..r {
                        ga.row_mut(row)[..g.cols()].copy_from_slice(g.row(row));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy {
                    logits,
                    rows,
                    labels,
                    probs,
                } => {
                    let (r, c) = shapes[logits.0];
                    let scale = g.item() / rows.len() as f64;
                    let mut gz = Matrix::zeros(r, c);
                    for (k, (&row, &y)) in rows.iter().zip(labels).enumerate() {
                        let dst = gz.row_mut(row);
                        for (col, (d, p)) in dst.iter_mut().zip(probs.row(k)).enumerate() {
                            let t = if col == y { 1.0 } else { 0.0 };
                            *d += (p - t) * scale;
                        }
                    }
                    acc(&mut grads, *logits, gz);
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.item();
                    acc(&mut grads, *a, val(*a).scale(s));
                }
                Op::Scale(a, s) => {
                    acc(&mut grads, *a, g.scale(*s));
                }
                Op::WeightedSqDiff {
                    param,
                    anchor,
                    weights,
                } => {
                    let (r, c) = shapes[param.0];
                    let s = 2.0 * g.item();
                    let mut gp = Matrix::zeros(r, c);
                    for (k, o) in gp.data_mut()[..anchor.len()].iter_mut().enumerate() {
                        *o = s * weights[k] * (val(*param).data()[k] - anchor[k]);
                    }
                    acc(&mut grads, *param, gp);
                }
                Op::Distill {
                    logits,
                    target,
                    student,
                    temperature,
                } => {
                    let (r, c) = shapes[logits.0];
                    let scale = g.item() / (r as f64 * temperature);
                    let mut gz = Matrix::zeros(r, c);
                    for ((d, q), p) in gz.data_mut().iter_mut().zip(student.data()).zip(target.data()) {
                        *d = (q - p) * scale;
                    }
                    acc(&mut grads, *logits, gz);
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let th = t.param(Matrix::scalar(3.0));
        let l = t.sum_squares(th);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(th).item(), 6.0);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut t = Tape::new();
        let th = t.param(Matrix::scalar(-1.0));
        let r = t.relu(th);
        let l = t.scale(r, 1.0);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(th).item(), 0.0);
    }

    #[test]
    fn backward_twice_fails() {
        let mut t = Tape::new();
        let th = t.param(Matrix::scalar(1.0));
        let l = t.sum_squares(th);
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let th = t.param(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(th), Err(Error::NotScalar)));
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut t = Tape::new();
        let a = t.param(Matrix::scalar(2.0));
        let b = t.param(Matrix::zeros(2, 3));
        let l = t.sum_squares(a);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(b), Matrix::zeros(2, 3));
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::from_rows(&[vec![0.0, 0.0]]));
        let l = t.cross_entropy(z, &[0], &[true]).unwrap();
        assert!((t.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let z = t.constant(Matrix::from_rows(&[vec![10.0, 0.0]]));
        let l = t.cross_entropy(z, &[0], &[true]).unwrap();
        // −log(e^10 / (e^10 + 1)) = ln(1 + e^−10)
        let expected = (1.0f64 + (-10.0f64).exp()).ln();
        assert!((t.value(l).item() - expected).abs() < 1e-15);
        assert!((t.value(l).item() - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_mask_drops_rows() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::from_rows(&[vec![1.0, -2.0], vec![7.0, 3.0]]));
        let both = t.cross_entropy(z, &[1, 0], &[true, false]).unwrap();
        let z1 = t.constant(Matrix::from_rows(&[vec![1.0, -2.0]]));
        let one = t.cross_entropy(z1, &[1], &[true]).unwrap();
        assert_eq!(t.value(both).item(), t.value(one).item());
    }

    #[test]
    fn cross_entropy_rejects_empty_and_bad_label() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::zeros(2, 2));
        assert!(matches!(t.cross_entropy(z, &[0, 0], &[false, false]), Err(Error::EmptyBatch)));
        assert!(matches!(
            t.cross_entropy(z, &[0, 2], &[true, true]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn distill_is_zero_when_student_matches() {
        let z = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![0.0, 0.5, 0.1]]);
        let target = softmax(&z, 2.0);
        let mut t = Tape::new();
        let v = t.param(z);
        let l = t.distill(v, target, 2.0).unwrap();
        assert!(t.value(l).item().abs() < 1e-15);
        let g = t.backward(l).unwrap();
        assert!(g.wrt(v).data().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn dropout_modes() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5]]);
        let mut t = Tape::new();
        let a = t.constant(x.clone());
        let e = t.dropout(a, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(t.value(e), &x);
        let z = t.dropout(a, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(t.value(z), &x);
        assert!(t.dropout(a, 1.0, Mode::Train, &mut rng).is_err());

        let ones = t.constant(Matrix::filled(1, 100_000, 1.0));
        let d = t.dropout(ones, 0.5, Mode::Train, &mut rng).unwrap();
        let v = t.value(d);
        let mean = v.data().iter().sum::<f64>() / v.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(v.data().iter().all(|&x| x == 0.0 || x == 2.0));
    }

    #[test]
    fn op_counts() {
        let mut t = Tape::new();
        let a = t.param(Matrix::scalar(1.0));
        let b = t.scale(a, 2.0);
        let _ = t.scale(b, 2.0);
        assert_eq!(t.count(OpKind::Scale), 2);
        assert_eq!(t.count(OpKind::Leaf), 1);
    }
}
