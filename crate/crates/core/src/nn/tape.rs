//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes that do not
//! depend on a trainable parameter are marked constant and skipped by
//! [`Tape::backward`].

use std::collections::HashMap;

use super::{Matrix, ParamSet};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Matrix),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    GroupSum(Var, usize),
    SoftmaxRows(Var),
    LogSoftmaxMasked(Var, Vec<usize>),
    RowMix(Var, Vec<f64>),
    Sum(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    bound: HashMap<String, Var>,
}

fn check(cond: bool, op: &'static str, detail: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::shape(op, detail()))
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Registers a trainable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        v
    }

    /// Loads `name` from `params`, once per tape, as a trainable leaf or as a
    /// constant.
    pub fn load(&mut self, params: &ParamSet, name: &str, trainable: bool) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::shape("load", format!("missing parameter `{name}`")))?
            .clone();
        let v = if trainable {
            self.param(name, value)
        } else {
            self.constant(value)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        check(rm.rows() == 1 && rm.cols() == am.cols(), "add_row", || {
            format!("{:?} + row {:?}", am.shape(), rm.shape())
        })?;
        let mut value = am.clone();
        let r = rm.data().to_vec();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        check(sa == sb, op, || format!("{sa:?} vs {sb:?}"))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (am, bm) = (self.value(a), self.value(b));
        let data = am.data().iter().zip(bm.data()).map(|(x, y)| f(*x, *y)).collect();
        Matrix::from_vec(am.rows(), am.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let am = self.value(a);
        check(am.shape() == c.shape(), "mul_const", || {
            format!("{:?} vs {:?}", am.shape(), c.shape())
        })?;
        let data = am.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Matrix::from_vec(am.rows(), am.cols(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        check(!parts.is_empty(), "concat_cols", || "no inputs".into())?;
        let rows = self.value(parts[0]).rows();
        check(
            parts.iter().all(|p| self.value(*p).rows() == rows),
            "concat_cols",
            || "row counts differ".into(),
        )?;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        check(start + len <= am.cols(), "slice_cols", || {
            format!("[{start}, {}) of {} columns", start + len, am.cols())
        })?;
        let mut value = Matrix::zeros(am.rows(), len);
        for r in 0..am.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&am.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceCols(a, start), rg))
    }

    /// Builds a `rows x cols` matrix whose `k`-th element (row-major) is the
    /// `indices[k]`-th element of `a` (row-major).
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, rows: usize, cols: usize) -> Result<Var> {
        let am = self.value(a);
        check(indices.len() == rows * cols, "gather", || {
            format!("{} indices for {rows}x{cols}", indices.len())
        })?;
        check(indices.iter().all(|i| *i < am.len()), "gather", || {
            "index out of range".into()
        })?;
        let src = am.data();
        let data = indices.iter().map(|i| src[*i]).collect();
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Gather(a, indices), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshaped(rows, cols)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Sums consecutive blocks of `group` rows. Within a block each column is
    /// summed in ascending value order, so the result does not depend on how
    /// the block's rows are ordered.
    pub fn group_sum(&mut self, a: Var, group: usize) -> Result<Var> {
        let am = self.value(a);
        check(group > 0 && am.rows() % group == 0, "group_sum", || {
            format!("{} rows in groups of {group}", am.rows())
        })?;
        let out_rows = am.rows() / group;
        let cols = am.cols();
        let mut value = Matrix::zeros(out_rows, cols);
        let mut buf = vec![0.0; group];
        for g in 0..out_rows {
            for c in 0..cols {
                for (k, slot) in buf.iter_mut().enumerate() {
                    *slot = am.get(g * group + k, c);
                }
                buf.sort_by(f64::total_cmp);
                value.set(g, c, buf.iter().sum());
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::GroupSum(a, group), rg))
    }

    /// Row-wise softmax; denominators are summed in ascending order.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut value = am.clone();
        let mut buf = Vec::with_capacity(am.cols());
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for x in row.iter_mut() {
                *x = (*x - max).exp();
            }
            buf.clear();
            buf.extend_from_slice(row);
            buf.sort_by(f64::total_cmp);
            let total: f64 = buf.iter().sum();
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise log-softmax over the first `valid[r]` columns of row `r`;
    /// the remaining columns are set to −∞.
    pub fn log_softmax_masked(&mut self, a: Var, valid: Vec<usize>) -> Result<Var> {
        let am = self.value(a);
        check(valid.len() == am.rows(), "log_softmax_masked", || {
            format!("{} masks for {} rows", valid.len(), am.rows())
        })?;
        check(
            valid.iter().all(|k| *k >= 1 && *k <= am.cols()),
            "log_softmax_masked",
            || "each row needs between 1 and cols valid classes".into(),
        )?;
        let mut value = am.clone();
        for (r, &k) in valid.iter().enumerate() {
            let row = value.row_mut(r);
            let lse = log_sum_exp(&row[..k]);
            for x in &mut row[..k] {
                *x -= lse;
            }
            for x in &mut row[k..] {
                *x = f64::NEG_INFINITY;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmaxMasked(a, valid), rg))
    }

    /// Per-row bilinear mixing: `out[r, o] = Σ_k a[r, k] · coefs[r, k, o]`,
    /// with `coefs` laid out row-major as `rows x cols(a) x out_cols`.
    pub fn row_mix(&mut self, a: Var, coefs: Vec<f64>, out_cols: usize) -> Result<Var> {
        let am = self.value(a);
        let (n, k) = am.shape();
        check(coefs.len() == n * k * out_cols, "row_mix", || {
            format!("{} coefficients for {n}x{k}x{out_cols}", coefs.len())
        })?;
        let mut value = Matrix::zeros(n, out_cols);
        for r in 0..n {
            let x = am.row(r);
            let block = &coefs[r * k * out_cols..(r + 1) * k * out_cols];
            let out = value.row_mut(r);
            for (kk, &xv) in x.iter().enumerate() {
                for (o, c) in out.iter_mut().zip(&block[kk * out_cols..(kk + 1) * out_cols]) {
                    *o += xv * c;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::RowMix(a, coefs), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Backpropagates from the scalar `loss` and returns the gradient of every
    /// trainable parameter registered on this tape.
    pub fn backward(&self, loss: Var) -> Result<ParamSet> {
        check(self.value(loss).len() == 1, "backward", || {
            "loss must be a scalar".into()
        })?;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = ParamSet::new();
        for (name, v) in &self.params {
            let shape = self.value(*v).shape();
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1));
            match out.get_mut(name) {
                Some(existing) => existing.add_assign(&g),
                None => out.insert(name.clone(), g),
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn grad_slot<'a>(&self, grads: &'a mut [Option<Matrix>], v: Var) -> Option<&'a mut Matrix> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let (r, c) = self.value(v).shape();
        Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.matmul_transposed(self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                let av = self.value(*a);
                if let Some(gb) = self.grad_slot(grads, *b) {
                    av.transposed_matmul_into(g, gb);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if let Some(gr) = self.grad_slot(grads, *row) {
                    let acc = gr.data_mut();
                    for r in 0..g.rows() {
                        for (s, x) in acc.iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = zip(g, self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = zip(g, self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MulConst(a, c) => {
                self.accumulate(grads, *a, zip(g, c, |x, y| x * y));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::Relu(a) => {
                let ga = zip(g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, zip(g, out, |x, y| x * (1.0 - y * y)));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, zip(g, out, |x, y| x * y * (1.0 - y)));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if let Some(gp) = self.grad_slot(grads, *p) {
                        for r in 0..g.rows() {
                            for (s, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + pc]) {
                                *s += x;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for r in 0..g.rows() {
                        let dst = &mut ga.row_mut(r)[*start..*start + g.cols()];
                        for (s, x) in dst.iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                }
            }
            Op::Gather(a, indices) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let dst = ga.data_mut();
                    for (i, x) in indices.iter().zip(g.data()) {
                        dst[*i] += x;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (s, x) in ga.data_mut().iter_mut().zip(g.data()) {
                        *s += x;
                    }
                }
            }
            Op::GroupSum(a, group) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let cols = g.cols();
                    for r in 0..ga.rows() {
                        let src = &g.data()[(r / group) * cols..(r / group + 1) * cols];
                        for (s, x) in ga.row_mut(r).iter_mut().zip(src) {
                            *s += x;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for r in 0..g.rows() {
                        let p = out.row(r);
                        let gr = g.row(r);
                        let dot: f64 = p.iter().zip(gr).map(|(p, g)| p * g).sum();
                        for ((s, p), g) in ga.row_mut(r).iter_mut().zip(p).zip(gr) {
                            *s += p * (g - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxMasked(a, valid) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    for (r, &k) in valid.iter().enumerate() {
                        let lp = &out.row(r)[..k];
                        let gr = &g.row(r)[..k];
                        let total: f64 = gr.iter().sum();
                        for ((s, l), g) in ga.row_mut(r)[..k].iter_mut().zip(lp).zip(gr) {
                            *s += g - l.exp() * total;
                        }
                    }
                }
            }
            Op::RowMix(a, coefs) => {
                if let Some(ga) = self.grad_slot(grads, *a) {
                    let out_cols = g.cols();
                    let k = ga.cols();
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let block = &coefs[r * k * out_cols..(r + 1) * k * out_cols];
                        for (kk, s) in ga.row_mut(r).iter_mut().enumerate() {
                            let c = &block[kk * out_cols..(kk + 1) * out_cols];
                            *s += c.iter().zip(gr).map(|(c, g)| c * g).sum::<f64>();
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.scalar_value()));
            }
        }
    }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
