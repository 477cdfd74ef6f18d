//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Tape`] records every primitive as it is evaluated. Parameters are
//! read in place from a borrowed [`ParameterStore`]; constants are owned by
//! the tape. [`Tape::backward`] walks the record in reverse and returns the
//! gradient of a scalar node with respect to every parameter it touched.

use super::matrix::{gemm, Matrix};
use super::store::{Gradients, ParamId, ParameterStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Inputs sparser than this use the row-sparse dense-layer kernel.
const SPARSE_DENSITY: f64 = 0.3;

#[derive(Debug)]
struct SparseRows {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    fn from_dense(x: &Matrix) -> Self {
        let mut row_ptr = Vec::with_capacity(x.rows() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            row_ptr,
            cols,
            vals,
        }
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[s..e]
            .iter()
            .copied()
            .zip(self.vals[s..e].iter().copied())
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Var,
        sparse: Option<SparseRows>,
    },
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    Exp(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ConcatCols(Var, Var),
    SumCols(Var),
    SumAll(Var),
    LogSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    value: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(m)) => m,
            (_, None) => unreachable!("node value released"),
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x W + b` with `x: n x in`, `W: in x out`, `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, k) = xv.shape();
        let (wk, out) = wv.shape();
        if k != wk || bv.shape() != (1, out) {
            return Err(Error::Shape(format!(
                "dense layer expects input width {wk} and bias 1x{out}, got input {n}x{k} and bias {}x{}",
                bv.rows(),
                bv.cols()
            )));
        }
        let mut y = Matrix::zeros(n, out);
        for r in 0..n {
            y.row_mut(r).copy_from_slice(bv.as_slice());
        }
        let sparse = if !self.rg(x) && xv.density() < SPARSE_DENSITY {
            let sp = SparseRows::from_dense(xv);
            let w_data = wv.as_slice();
            for r in 0..n {
                let yr = &mut y.as_mut_slice()[r * out..(r + 1) * out];
                for (c, v) in sp.row(r) {
                    let wr = &w_data[c * out..(c + 1) * out];
                    for (yo, wo) in yr.iter_mut().zip(wr) {
                        *yo += v * wo;
                    }
                }
            }
            Some(sp)
        } else {
            gemm(
                n,
                k,
                out,
                1.0,
                xv.as_slice(),
                k as isize,
                1,
                wv.as_slice(),
                out as isize,
                1,
                1.0,
                y.as_mut_slice(),
                out as isize,
            );
            None
        };
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(y, Op::Linear { x, w, b, sparse }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let y = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(y, op, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Elementwise clamp; gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let y = Matrix::from_vec(av.rows(), av.cols(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Column-wise concatenation `[a | b]`; row counts must agree.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!(
                "concat of {} rows with {} rows",
                av.rows(),
                bv.rows()
            )));
        }
        let (n, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut y = Matrix::zeros(n, ca + cb);
        for r in 0..n {
            let row = y.row_mut(r);
            row[..ca].copy_from_slice(av.row(r));
            row[ca..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::ConcatCols(a, b), rg))
    }

    /// Row sums: `n x m -> n x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let y = Matrix::column_vector((0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect());
        let rg = self.rg(x);
        self.push(y, Op::SumCols(x), rg)
    }

    /// Sum of every entry: `-> 1 x 1`.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let y = Matrix::from_vec(1, 1, vec![self.value(x).sum()]);
        let rg = self.rg(x);
        self.push(y, Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Numerically stable row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut y = xv.clone();
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(x);
        self.push(y, Op::LogSoftmax(x), rg)
    }

    /// Gradient of the scalar `loss` with respect to every parameter it depends on.
    pub fn backward(mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward requires a 1x1 loss".into()));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::with_len(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let y = &self.nodes[i];
            match &y.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::Linear { x, w, b, sparse } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (xv, wv) = (self.value(x), self.value(w));
                    let (n, k) = xv.shape();
                    let out_w = wv.cols();
                    if self.rg(x) {
                        let mut dx = Matrix::zeros(n, k);
                        // dx = g W^T
                        gemm(
                            n,
                            out_w,
                            k,
                            1.0,
                            g.as_slice(),
                            out_w as isize,
                            1,
                            wv.as_slice(),
                            1,
                            out_w as isize,
                            0.0,
                            dx.as_mut_slice(),
                            k as isize,
                        );
                        add_grad(&mut grads, x, dx);
                    }
                    if self.rg(w) {
                        let mut dw = Matrix::zeros(k, out_w);
                        match sparse {
                            Some(sp) => {
                                let dwd = dw.as_mut_slice();
                                for r in 0..n {
                                    let gr = g.row(r);
                                    for (c, v) in sp.row(r) {
                                        let dst = &mut dwd[c * out_w..(c + 1) * out_w];
                                        for (d, gv) in dst.iter_mut().zip(gr) {
                                            *d += v * gv;
                                        }
                                    }
                                }
                            }
                            None => {
                                // dW = x^T g
                                gemm(
                                    k,
                                    n,
                                    out_w,
                                    1.0,
                                    xv.as_slice(),
                                    1,
                                    k as isize,
                                    g.as_slice(),
                                    out_w as isize,
                                    1,
                                    0.0,
                                    dw.as_mut_slice(),
                                    out_w as isize,
                                );
                            }
                        }
                        add_grad(&mut grads, w, dw);
                    }
                    if self.rg(b) {
                        let mut db = Matrix::zeros(1, out_w);
                        for r in 0..n {
                            for (d, gv) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                                *d += gv;
                            }
                        }
                        add_grad(&mut grads, b, db);
                    }
                }
                Op::Tanh(x) => {
                    let yv = y.value.as_ref().expect("value");
                    let d = zip_map(&g, yv, |g, y| g * (1.0 - y * y));
                    add_grad(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let yv = y.value.as_ref().expect("value");
                    let d = zip_map(&g, yv, |g, y| g * y * (1.0 - y));
                    add_grad(&mut grads, *x, d);
                }
                Op::Ln(x) => {
                    let d = zip_map(&g, self.value(*x), |g, x| g / x);
                    add_grad(&mut grads, *x, d);
                }
                Op::Exp(x) => {
                    let yv = y.value.as_ref().expect("value");
                    let d = zip_map(&g, yv, |g, y| g * y);
                    add_grad(&mut grads, *x, d);
                }
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    let d = zip_map(
                        &g,
                        self.value(*x),
                        |g, x| {
                            if x < lo || x > hi {
                                0.0
                            } else {
                                g
                            }
                        },
                    );
                    add_grad(&mut grads, *x, d);
                }
                Op::Affine { x, scale } => {
                    let s = *scale;
                    add_grad(&mut grads, *x, g.map(|g| g * s));
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(b) {
                        add_grad(&mut grads, b, g.clone());
                    }
                    if self.rg(a) {
                        add_grad(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(b) {
                        add_grad(&mut grads, b, g.map(|v| -v));
                    }
                    if self.rg(a) {
                        add_grad(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.rg(a) {
                        let d = zip_map(&g, self.value(b), |g, b| g * b);
                        add_grad(&mut grads, a, d);
                    }
                    if self.rg(b) {
                        let d = zip_map(&g, self.value(a), |g, a| g * a);
                        add_grad(&mut grads, b, d);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.value(a).cols();
                    let cb = self.value(b).cols();
                    let n = g.rows();
                    if self.rg(a) {
                        let mut da = Matrix::zeros(n, ca);
                        for r in 0..n {
                            da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        add_grad(&mut grads, a, da);
                    }
                    if self.rg(b) {
                        let mut db = Matrix::zeros(n, cb);
                        for r in 0..n {
                            db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        add_grad(&mut grads, b, db);
                    }
                }
                Op::SumCols(x) => {
                    let (n, m) = self.value(*x).shape();
                    let mut d = Matrix::zeros(n, m);
                    for r in 0..n {
                        let gv = g.get(r, 0);
                        d.row_mut(r).iter_mut().for_each(|v| *v = gv);
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::SumAll(x) => {
                    let (n, m) = self.value(*x).shape();
                    add_grad(&mut grads, *x, Matrix::filled(n, m, g.get(0, 0)));
                }
                Op::LogSoftmax(x) => {
                    let yv = y.value.as_ref().expect("value");
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let gs: f64 = g.row(r).iter().sum();
                        for (dv, yv) in d.row_mut(r).iter_mut().zip(yv.row(r)) {
                            *dv -= yv.exp() * gs;
                        }
                    }
                    add_grad(&mut grads, *x, d);
                }
            }
            // Consumers of node i all have larger indices and were already visited.
            if i != loss.0 {
                self.nodes[i].value.take();
            }
        }
        Ok(out)
    }
}

fn add_grad(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_scaled(&g, 1.0),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
