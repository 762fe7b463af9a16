use thiserror::Error;

use crate::matrix::DenseMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("{op}: row index {index} out of range for {rows} rows")]
    RowOutOfRange { op: &'static str, index: usize, rows: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("row_concat needs at least one operand")]
    EmptyConcat,
}

/// Handle to a matrix recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Value(usize);

impl Value {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Value, Value),
    Add(Value, Value),
    Mul(Value, Value),
    Scale(Value, f64),
    Relu(Value),
    Sigmoid(Value),
    Tanh(Value),
    Ln(Value),
    Transpose(Value),
    RowConcat(Vec<Value>),
    Sum(Value),
    SoftmaxRows(Value),
    DiagRowScale(Value, Value),
    GatherRows(Value, Vec<usize>),
    ScatterAddRows { base: Value, src: Value, rows: Vec<usize> },
    PairOuter(Value, Value),
}

#[derive(Debug, Clone)]
struct Node {
    data: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation. Creation order is a valid
/// topological order, so backward is a single reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<DenseMatrix>>,
}

fn check_same(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch { op, left: a.shape(), right: b.shape() });
    }
    Ok(())
}

fn accumulate(slot: &mut Option<DenseMatrix>, g: DenseMatrix) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
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

    fn push(&mut self, data: DenseMatrix, op: Op, needs_grad: bool) -> Value {
        self.nodes.push(Node { data, op, needs_grad });
        self.grads.push(None);
        Value(self.nodes.len() - 1)
    }

    fn derived(&mut self, data: DenseMatrix, op: Op, parents: &[Value]) -> Value {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(data, op, needs_grad)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, data: DenseMatrix) -> Value {
        self.push(data, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, data: DenseMatrix) -> Value {
        self.push(data, Op::Leaf, false)
    }

    pub fn data(&self, v: Value) -> &DenseMatrix {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Value) -> (usize, usize) {
        self.nodes[v.0].data.shape()
    }

    /// Gradient after [`Tape::backward`]; zeros for values the loss does not reach.
    pub fn grad(&self, v: Value) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                DenseMatrix::zeros(r, c)
            }
        }
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        let (da, db) = (self.data(a), self.data(b));
        if da.cols() != db.rows() {
            return Err(AutodiffError::ShapeMismatch { op: "matmul", left: da.shape(), right: db.shape() });
        }
        let out = da.matmul(db);
        Ok(self.derived(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        check_same("add", self.data(a), self.data(b))?;
        let out = self.data(a).zip_map(self.data(b), |x, y| x + y);
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    pub fn elementwise_mul(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        check_same("elementwise_mul", self.data(a), self.data(b))?;
        let out = self.data(a).zip_map(self.data(b), |x, y| x * y);
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Value, factor: f64) -> Value {
        let out = self.data(a).map(|x| x * factor);
        self.derived(out, Op::Scale(a, factor), &[a])
    }

    /// Subgradient at zero is zero.
    pub fn relu(&mut self, a: Value) -> Value {
        let out = self.data(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.derived(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let out = self.data(a).map(sigmoid);
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let out = self.data(a).map(f64::tanh);
        self.derived(out, Op::Tanh(a), &[a])
    }

    pub fn ln(&mut self, a: Value) -> Result<Value, AutodiffError> {
        if self.data(a).as_slice().iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::NonFinite { op: "ln" });
        }
        let out = self.data(a).map(f64::ln);
        Ok(self.derived(out, Op::Ln(a), &[a]))
    }

    pub fn transpose(&mut self, a: Value) -> Value {
        let out = self.data(a).transpose();
        self.derived(out, Op::Transpose(a), &[a])
    }

    /// Stacks operands vertically; all must share a column count.
    pub fn row_concat(&mut self, parts: &[Value]) -> Result<Value, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let cols = self.data(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.data(p);
            if m.cols() != cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "row_concat",
                    left: self.data(first).shape(),
                    right: m.shape(),
                });
            }
            data.extend_from_slice(m.as_slice());
            rows += m.rows();
        }
        let out = DenseMatrix::from_raw(rows, cols, data);
        Ok(self.derived(out, Op::RowConcat(parts.to_vec()), parts))
    }

    pub fn scalar_sum(&mut self, a: Value) -> Value {
        let out = DenseMatrix::filled(1, 1, self.data(a).sum());
        self.derived(out, Op::Sum(a), &[a])
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_over_rows(&mut self, a: Value) -> Value {
        let out = softmax_rows(self.data(a));
        self.derived(out, Op::SoftmaxRows(a), &[a])
    }

    /// Scales row `i` of `z` by `weights[i]`; `weights` is an `N x 1` column.
    pub fn diag_row_scale(&mut self, z: Value, weights: Value) -> Result<Value, AutodiffError> {
        let (zm, wm) = (self.data(z), self.data(weights));
        if wm.cols() != 1 || wm.rows() != zm.rows() {
            return Err(AutodiffError::ShapeMismatch { op: "diag_row_scale", left: zm.shape(), right: wm.shape() });
        }
        let mut out = zm.clone();
        for i in 0..out.rows() {
            let w = wm.get(i, 0);
            out.row_mut(i).iter_mut().for_each(|x| *x *= w);
        }
        Ok(self.derived(out, Op::DiagRowScale(z, weights), &[z, weights]))
    }

    /// Output row `p` is row `rows[p]` of `a`.
    pub fn gather_rows(&mut self, a: Value, rows: &[usize]) -> Result<Value, AutodiffError> {
        let m = self.data(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= m.rows()) {
            return Err(AutodiffError::RowOutOfRange { op: "gather_rows", index: bad, rows: m.rows() });
        }
        let out = m.select_rows(rows);
        Ok(self.derived(out, Op::GatherRows(a, rows.to_vec()), &[a]))
    }

    /// `base` with row `p` of `src` added onto row `rows[p]`.
    pub fn scatter_add_rows(&mut self, base: Value, src: Value, rows: &[usize]) -> Result<Value, AutodiffError> {
        let (bm, sm) = (self.data(base), self.data(src));
        if bm.cols() != sm.cols() || sm.rows() != rows.len() {
            return Err(AutodiffError::ShapeMismatch { op: "scatter_add_rows", left: bm.shape(), right: sm.shape() });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= bm.rows()) {
            return Err(AutodiffError::RowOutOfRange { op: "scatter_add_rows", index: bad, rows: bm.rows() });
        }
        let mut out = bm.clone();
        for (p, &r) in rows.iter().enumerate() {
            for (o, s) in out.row_mut(r).iter_mut().zip(sm.row(p)) {
                *o += s;
            }
        }
        Ok(self.derived(out, Op::ScatterAddRows { base, src, rows: rows.to_vec() }, &[base, src]))
    }

    /// Row-wise flattened outer product: `out[p, i*e + j] = a[p, i] * b[p, j]`
    /// for `a: P x d`, `b: P x e`.
    pub fn pair_outer(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        let (am, bm) = (self.data(a), self.data(b));
        if am.rows() != bm.rows() {
            return Err(AutodiffError::ShapeMismatch { op: "pair_outer", left: am.shape(), right: bm.shape() });
        }
        let (p, d, e) = (am.rows(), am.cols(), bm.cols());
        let mut out = DenseMatrix::zeros(p, d * e);
        for r in 0..p {
            let (ar, br) = (am.row(r), bm.row(r));
            let orow = out.row_mut(r);
            for i in 0..d {
                for j in 0..e {
                    orow[i * e + j] = ar[i] * br[j];
                }
            }
        }
        Ok(self.derived(out, Op::PairOuter(a, b), &[a, b]))
    }

    /// Fills gradients of every value reachable from `loss`. Previous
    /// gradients are discarded first.
    pub fn backward(&mut self, loss: Value) -> Result<(), AutodiffError> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(AutodiffError::NotScalar { rows, cols });
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(upstream) = self.grads[idx].take() else { continue };
            self.propagate(idx, &upstream);
            self.grads[idx] = Some(upstream);
        }
        Ok(())
    }

    fn send(&mut self, to: Value, g: DenseMatrix) {
        if self.nodes[to.0].needs_grad {
            accumulate(&mut self.grads[to.0], g);
        }
    }

    fn wants(&self, v: Value) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&mut self, idx: usize, up: &DenseMatrix) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(a) {
                    let g = up.matmul_t(self.data(b));
                    self.send(a, g);
                }
                if self.wants(b) {
                    let g = self.data(a).t_matmul(up);
                    self.send(b, g);
                }
            }
            Op::Add(a, b) => {
                self.send(a, up.clone());
                self.send(b, up.clone());
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let g = up.zip_map(self.data(b), |u, y| u * y);
                    self.send(a, g);
                }
                if self.wants(b) {
                    let g = up.zip_map(self.data(a), |u, x| u * x);
                    self.send(b, g);
                }
            }
            Op::Scale(a, f) => self.send(a, up.map(|u| u * f)),
            Op::Relu(a) => {
                let g = up.zip_map(self.data(a), |u, x| if x > 0.0 { u } else { 0.0 });
                self.send(a, g);
            }
            Op::Sigmoid(a) => {
                let g = up.zip_map(&self.nodes[idx].data, |u, y| u * y * (1.0 - y));
                self.send(a, g);
            }
            Op::Tanh(a) => {
                let g = up.zip_map(&self.nodes[idx].data, |u, y| u * (1.0 - y * y));
                self.send(a, g);
            }
            Op::Ln(a) => {
                let g = up.zip_map(self.data(a), |u, x| u / x);
                self.send(a, g);
            }
            Op::Transpose(a) => self.send(a, up.transpose()),
            Op::RowConcat(parts) => {
                let cols = up.cols();
                let mut offset = 0;
                for p in parts {
                    let r = self.data(p).rows();
                    let slice = up.as_slice()[offset * cols..(offset + r) * cols].to_vec();
                    self.send(p, DenseMatrix::from_raw(r, cols, slice));
                    offset += r;
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(a);
                self.send(a, DenseMatrix::filled(r, c, up.get(0, 0)));
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[idx].data;
                let mut g = DenseMatrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, ur) = (y.row(i), up.row(i));
                    let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                    for (j, gv) in g.row_mut(i).iter_mut().enumerate() {
                        *gv = yr[j] * (ur[j] - dot);
                    }
                }
                self.send(a, g);
            }
            Op::DiagRowScale(z, w) => {
                if self.wants(z) {
                    let wm = self.data(w);
                    let mut g = up.clone();
                    for i in 0..g.rows() {
                        let s = wm.get(i, 0);
                        g.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    }
                    self.send(z, g);
                }
                if self.wants(w) {
                    let zm = self.data(z);
                    let mut g = DenseMatrix::zeros(zm.rows(), 1);
                    for i in 0..zm.rows() {
                        g.set(i, 0, zm.row(i).iter().zip(up.row(i)).map(|(a, b)| a * b).sum());
                    }
                    self.send(w, g);
                }
            }
            Op::GatherRows(a, rows) => {
                let (r, c) = self.shape(a);
                let mut g = DenseMatrix::zeros(r, c);
                for (p, &src) in rows.iter().enumerate() {
                    for (gv, u) in g.row_mut(src).iter_mut().zip(up.row(p)) {
                        *gv += u;
                    }
                }
                self.send(a, g);
            }
            Op::ScatterAddRows { base, src, rows } => {
                self.send(base, up.clone());
                if self.wants(src) {
                    self.send(src, up.select_rows(&rows));
                }
            }
            Op::PairOuter(a, b) => {
                let (am, bm) = (self.data(a).clone(), self.data(b).clone());
                let (p, d, e) = (am.rows(), am.cols(), bm.cols());
                let mut ga = DenseMatrix::zeros(p, d);
                let mut gb = DenseMatrix::zeros(p, e);
                for r in 0..p {
                    let ur = up.row(r);
                    for i in 0..d {
                        for j in 0..e {
                            let u = ur[i * e + j];
                            ga.add_at(r, i, u * bm.get(r, j));
                            gb.add_at(r, j, u * am.get(r, i));
                        }
                    }
                }
                self.send(a, ga);
                self.send(b, gb);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}
