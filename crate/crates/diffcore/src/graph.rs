//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Inputs of a node always have
//! smaller ids, so node order is already a topological order and backward is
//! a single reverse sweep. Graphs are cheap and meant to be rebuilt for every
//! batch.
//!
//! ```
//! use diffcore::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().item().unwrap(), 6.0);
//! ```

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// Batch plus a `1 x cols` row broadcast over every row.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    /// Per-row sum, `rows x 1`.
    SumCols(Var),
    /// Mean over rows, `1 x cols`.
    MeanRows(Var),
    BroadcastRows(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    SquaredNorm(Var),
    SquaredError(Var, Var),
    CosineRows(Var, Var),
    NormalizeRows(Var),
    LogSumExpRows(Var, Option<Vec<bool>>),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients of one scalar root with respect to every node it depends on.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    root: usize,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of the root with respect to `target`, which may be a leaf or
    /// an intermediate activation.
    pub fn wrt(&self, target: Var) -> Result<&Tensor<F>> {
        self.grads
            .get(target.0)
            .and_then(Option::as_ref)
            .ok_or(Error::NotAnAncestor {
                root: self.root,
                target: target.0,
            })
    }

    pub fn take(&mut self, target: Var) -> Result<Tensor<F>> {
        let root = self.root;
        self.grads
            .get_mut(target.0)
            .and_then(Option::take)
            .ok_or(Error::NotAnAncestor {
                root,
                target: target.0,
            })
    }
}

fn eps<F: Scalar>() -> F {
    F::lit(1e-12)
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn variable(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf treated as a constant: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(
        &mut self,
        value: Tensor<F>,
        op: Op<F>,
        inputs: &[Var],
        name: &'static str,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        self.value(a).same_shape(self.value(b), op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ`, e.g. a similarity matrix between two batches of rows.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        self.push(v, Op::MatMulNt(a, b), &[a, b], "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a], "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds the `1 x cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        if self.shape(b) != (1, ca) {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: (ra, ca),
                right: self.shape(b),
            });
        }
        let mut v = self.value(a).clone();
        let row = self.value(b).data().to_vec();
        for r in 0..ra {
            for (x, &y) in v.row_mut(r).iter_mut().zip(&row) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, b), &[a, b], "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b], "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, k: F) -> Result<Var> {
        let v = self.value(a).scale(k);
        self.push(v, Op::Scale(a, k), &[a], "scale")
    }

    pub fn add_scalar(&mut self, a: Var, k: F) -> Result<Var> {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a), &[a], "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self
            .value(a)
            .map(|x| if x > F::zero() { x } else { F::zero() });
        self.push(v, Op::Relu(a), &[a], "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(F::tanh);
        self.push(v, Op::Tanh(a), &[a], "tanh")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Invalid("mean of empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / F::lit(t.len() as f64));
        self.push(v, Op::Mean(a), &[a], "mean")
    }

    /// Per-row sum, `rows x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|r| t.row(r).iter().copied().sum())
            .collect();
        let v = Tensor::from_vec(t.rows(), 1, data)?;
        self.push(v, Op::SumCols(a), &[a], "sum_cols")
    }

    /// Mean over rows, `1 x cols`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(Error::Invalid("mean_rows of empty tensor".into()));
        }
        let n = F::lit(t.rows() as f64);
        let v = t.column_sums().map(|x| x / n);
        self.push(v, Op::MeanRows(a), &[a], "mean_rows")
    }

    /// Repeats a `1 x cols` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                left: t.shape(),
                right: (1, t.cols()),
            });
        }
        let mut data = Vec::with_capacity(rows * t.cols());
        for _ in 0..rows {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_vec(rows, t.cols(), data)?;
        self.push(v, Op::BroadcastRows(a), &[a], "broadcast_rows")
    }

    /// Horizontal concatenation of equally tall blocks.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Invalid("concat of nothing".into()))?;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: s,
                });
            }
            cols += s.1;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        self.push(v, Op::Concat(parts.to_vec()), parts, "concat_cols")
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(Error::IndexOutOfRange {
                op: "slice_cols",
                index: end,
                bound: t.cols(),
            });
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let v = Tensor::from_vec(t.rows(), end - start, data)?;
        self.push(v, Op::SliceCols(a, start), &[a], "slice_cols")
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a).reshape(rows, cols)?;
        self.push(v, Op::Reshape(a), &[a], "reshape")
    }

    /// Sum of squared entries, `‖a‖²`.
    pub fn squared_norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::scalar(t.data().iter().map(|&x| x * x).sum());
        self.push(v, Op::SquaredNorm(a), &[a], "squared_norm")
    }

    /// Mean of squared elementwise differences.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "squared_error")?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.is_empty() {
            return Err(Error::Invalid("squared_error of empty tensors".into()));
        }
        let s: F = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let v = Tensor::scalar(s / F::lit(ta.len() as f64));
        self.push(v, Op::SquaredError(a, b), &[a, b], "squared_error")
    }

    /// Row-wise cosine similarity, `rows x 1`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same(a, b, "cosine_rows")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(ta.rows());
        for r in 0..ta.rows() {
            let (x, y) = (ta.row(r), tb.row(r));
            let na = norm(x);
            let nb = norm(y);
            if na < eps() || nb < eps() {
                return Err(Error::NonFinite { op: "cosine_rows" });
            }
            data.push(dot(x, y) / (na * nb));
        }
        let v = Tensor::from_vec(ta.rows(), 1, data)?;
        self.push(v, Op::CosineRows(a, b), &[a, b], "cosine_rows")
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let mut v = t.clone();
        for r in 0..t.rows() {
            let n = norm(t.row(r));
            if n < eps() {
                return Err(Error::NonFinite {
                    op: "normalize_rows",
                });
            }
            for x in v.row_mut(r) {
                *x /= n;
            }
        }
        self.push(v, Op::NormalizeRows(a), &[a], "normalize_rows")
    }

    /// Row-wise `log Σ exp`, optionally restricted to entries where `mask` is
    /// true. Every row must keep at least one entry.
    pub fn logsumexp_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let t = self.value(a);
        if let Some(m) = &mask {
            if m.len() != t.len() {
                return Err(Error::BadLength {
                    rows: t.rows(),
                    cols: t.cols(),
                    len: m.len(),
                });
            }
        }
        let mut data = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let keep = |c: usize| mask.as_ref().is_none_or(|m| m[r * t.cols() + c]);
            let row = t.row(r);
            let max = (0..t.cols())
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(F::neg_infinity(), F::max);
            if max == F::neg_infinity() {
                return Err(Error::Invalid(format!("logsumexp row {r} fully masked")));
            }
            let s: F = (0..t.cols())
                .filter(|&c| keep(c))
                .map(|c| (row[c] - max).exp())
                .sum();
            data.push(max + s.ln());
        }
        let v = Tensor::from_vec(t.rows(), 1, data)?;
        self.push(v, Op::LogSumExpRows(a, mask), &[a], "logsumexp_rows")
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let v = self.value(a).select_rows(&idx)?;
        self.push(v, Op::GatherRows(a, idx), &[a], "gather_rows")
    }

    /// Picks entries by flat row-major index into an `n x 1` column.
    pub fn gather_elems(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let mut data = Vec::with_capacity(idx.len());
        for &i in &idx {
            if i >= t.len() {
                return Err(Error::IndexOutOfRange {
                    op: "gather_elems",
                    index: i,
                    bound: t.len(),
                });
            }
            data.push(t.data()[i]);
        }
        let v = Tensor::from_vec(idx.len(), 1, data)?;
        self.push(v, Op::GatherElems(a, idx), &[a], "gather_elems")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::NonScalarRoot(shape));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::scalar(F::one()));
        }
        for id in (0..=root.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &gout, &mut grads)?;
            grads[id] = Some(gout);
        }
        Ok(Gradients {
            root: root.0,
            grads,
        })
    }

    fn propagate(
        &self,
        id: usize,
        gout: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        let out = &node.value;
        let mut send = |v: Var, g: Tensor<F>| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    send(*a, gout.matmul_nt(val(*b))?)?;
                }
                if needs(*b) {
                    send(*b, val(*a).matmul_tn(gout)?)?;
                }
            }
            Op::MatMulNt(a, b) => {
                // out = a bᵀ: da = gout b, db = goutᵀ a
                if needs(*a) {
                    send(*a, gout.matmul(val(*b))?)?;
                }
                if needs(*b) {
                    send(*b, gout.matmul_tn(val(*a))?)?;
                }
            }
            Op::Transpose(a) => send(*a, gout.transpose())?,
            Op::Add(a, b) => {
                send(*a, gout.clone())?;
                send(*b, gout.clone())?;
            }
            Op::AddRow(a, b) => {
                send(*a, gout.clone())?;
                if needs(*b) {
                    send(*b, gout.column_sums())?;
                }
            }
            Op::Sub(a, b) => {
                send(*a, gout.clone())?;
                if needs(*b) {
                    send(*b, gout.map(|x| -x))?;
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    send(*a, gout.zip_map(val(*b), "mul_back", |g, y| g * y)?)?;
                }
                if needs(*b) {
                    send(*b, gout.zip_map(val(*a), "mul_back", |g, x| g * x)?)?;
                }
            }
            Op::Scale(a, k) => send(*a, gout.scale(*k))?,
            Op::AddScalar(a) => send(*a, gout.clone())?,
            Op::Relu(a) => send(
                *a,
                gout.zip_map(
                    out,
                    "relu_back",
                    |g, y| if y > F::zero() { g } else { F::zero() },
                )?,
            )?,
            Op::Tanh(a) => send(
                *a,
                gout.zip_map(out, "tanh_back", |g, y| g * (F::one() - y * y))?,
            )?,
            Op::Sum(a) => {
                let g = gout.data()[0];
                let (r, c) = val(*a).shape();
                send(*a, Tensor::full(r, c, g))?;
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let g = gout.data()[0] / F::lit((r * c) as f64);
                send(*a, Tensor::full(r, c, g))?;
            }
            Op::SumCols(a) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    let gi = gout.data()[i];
                    g.row_mut(i).iter_mut().for_each(|x| *x = gi);
                }
                send(*a, g)?;
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let n = F::lit(r as f64);
                let row: Vec<F> = gout.data().iter().map(|&x| x / n).collect();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    g.row_mut(i).copy_from_slice(&row);
                }
                send(*a, g)?;
            }
            Op::BroadcastRows(a) => send(*a, gout.column_sums())?,
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if needs(p) {
                        let mut g = Tensor::zeros(r, c);
                        for i in 0..r {
                            g.row_mut(i)
                                .copy_from_slice(&gout.row(i)[offset..offset + c]);
                        }
                        send(p, g)?;
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let w = gout.cols();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    g.row_mut(i)[*start..*start + w].copy_from_slice(gout.row(i));
                }
                send(*a, g)?;
            }
            Op::Reshape(a) => {
                let (r, c) = val(*a).shape();
                send(*a, gout.reshape(r, c)?)?;
            }
            Op::SquaredNorm(a) => {
                let g = gout.data()[0] * F::lit(2.0);
                send(*a, val(*a).scale(g))?;
            }
            Op::SquaredError(a, b) => {
                let n = F::lit(val(*a).len() as f64);
                let k = gout.data()[0] * F::lit(2.0) / n;
                let d = val(*a).zip_map(val(*b), "se_back", |x, y| (x - y) * k)?;
                if needs(*b) {
                    send(*b, d.map(|x| -x))?;
                }
                send(*a, d)?;
            }
            Op::CosineRows(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (r, c) = ta.shape();
                let mut ga = Tensor::zeros(r, c);
                let mut gb = Tensor::zeros(r, c);
                for i in 0..r {
                    let (x, y) = (ta.row(i), tb.row(i));
                    let (nx, ny) = (norm(x), norm(y));
                    let cos = out.data()[i];
                    let g = gout.data()[i];
                    for j in 0..c {
                        ga.row_mut(i)[j] = g * (y[j] / (nx * ny) - cos * x[j] / (nx * nx));
                        gb.row_mut(i)[j] = g * (x[j] / (nx * ny) - cos * y[j] / (ny * ny));
                    }
                }
                if needs(*a) {
                    send(*a, ga)?;
                }
                if needs(*b) {
                    send(*b, gb)?;
                }
            }
            Op::NormalizeRows(a) => {
                let ta = val(*a);
                let (r, c) = ta.shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    let n = norm(ta.row(i));
                    let y = out.row(i);
                    let gi = gout.row(i);
                    let proj = dot(y, gi);
                    for j in 0..c {
                        g.row_mut(i)[j] = (gi[j] - y[j] * proj) / n;
                    }
                }
                send(*a, g)?;
            }
            Op::LogSumExpRows(a, mask) => {
                let ta = val(*a);
                let (r, c) = ta.shape();
                let mut g = Tensor::zeros(r, c);
                for i in 0..r {
                    let lse = out.data()[i];
                    let gi = gout.data()[i];
                    for j in 0..c {
                        let keep = mask.as_ref().is_none_or(|m| m[i * c + j]);
                        if keep {
                            g.row_mut(i)[j] = gi * (ta.get(i, j) - lse).exp();
                        }
                    }
                }
                send(*a, g)?;
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (x, &y) in g.row_mut(i).iter_mut().zip(gout.row(k)) {
                        *x += y;
                    }
                }
                send(*a, g)?;
            }
            Op::GatherElems(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut g = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    g.data_mut()[i] += gout.data()[k];
                }
                send(*a, g)?;
            }
        }
        Ok(())
    }
}

fn dot<F: Scalar>(x: &[F], y: &[F]) -> F {
    x.iter().zip(y).map(|(&a, &b)| a * b).sum()
}

fn norm<F: Scalar>(x: &[F]) -> F {
    dot(x, x).sqrt()
}

/// `∂root/∂target` for an intermediate activation `target`.
///
/// Convenience for latent-space optimization where the quantity being moved
/// is a feature rather than a weight.
pub fn grad_wrt_activation<F: Scalar>(
    graph: &Graph<F>,
    root: Var,
    target: Var,
) -> Result<Tensor<F>> {
    let grads = graph.backward(root)?;
    grads.wrt(target).cloned()
}
