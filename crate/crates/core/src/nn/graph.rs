//! Reverse-mode graph over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a single reverse sweep in [`Graph::backward`] visits
//! every node after all of its consumers. Scalar loss terms whose gradients
//! are cheaper to derive in closed form than to compose are recorded as
//! [`Graph::scalar_op`] nodes carrying their partials eagerly.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};

pub type Matrix = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Detach,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Sum(Var),
    ColumnMap {
        x: Var,
        src: Vec<usize>,
        deriv: Matrix,
    },
    Scalar(Vec<(Var, Matrix)>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// A single forward computation, recorded for differentiation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) {
    assert_eq!(a.dim(), b.dim(), "{what}: shape mismatch {:?} vs {:?}", a.dim(), b.dim());
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant or an input whose gradient may be inspected.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Reads a trainable parameter. Repeated reads of the same id return the
    /// same node, so shared weights accumulate a single gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    /// Parameters read during this forward pass, in id order.
    pub fn params_read(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar() on non-scalar node");
        m[[0, 0]]
    }

    /// Copies the value of `x`; no gradient flows back through the copy.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Detach)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul: inner dimension mismatch");
        let value = va.dot(vb);
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.ncols(), "matmul_bt: inner dimension mismatch");
        let value = va.dot(&vb.t());
        self.push(value, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        check_same_shape(va, vb, "add");
        let value = va + vb;
        self.push(value, Op::Add(a, b))
    }

    /// Adds the 1×n row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row: bias must be a single row");
        assert_eq!(va.ncols(), vr.ncols(), "add_row: width mismatch");
        let value = va + vr;
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let out = softmax(row.as_slice().expect("contiguous row"));
            row.assign(&ndarray::ArrayView1::from(&out));
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with the population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let (rows, cols) = vx.dim();
        let (vg, vb) = (self.value(gain), self.value(bias));
        assert_eq!(vg.dim(), (1, cols), "layer_norm: gain shape");
        assert_eq!(vb.dim(), (1, cols), "layer_norm: bias shape");
        let mut xhat = Matrix::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in vx.rows().into_iter().enumerate() {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * inv;
            }
        }
        let value = &xhat * vg + vb;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        assert!(start + len <= vx.ncols(), "slice_cols out of range");
        let value = vx.slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let value = self.value(x).select(Axis(0), idx);
        self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        )
    }

    /// Scales every row to unit Euclidean norm. Rows must be non-zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = row.dot(&row).sqrt();
            assert!(n > 0.0, "l2_normalize_rows: zero row");
            row /= n;
            norms.push(n);
        }
        self.push(value, Op::L2NormalizeRows { x, norms })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// A scalar node with precomputed partial derivatives with respect to
    /// each of its inputs.
    /// Column-wise lift: output column `k` is a scalar function of input
    /// column `src[k]`, applied row by row. The caller supplies the output
    /// `value` and the pointwise derivatives `deriv` (same shape as `value`).
    pub fn column_map(&mut self, x: Var, src: Vec<usize>, value: Matrix, deriv: Matrix) -> Var {
        let (rows, cols) = self.value(x).dim();
        assert_eq!(value.nrows(), rows, "column_map: row count");
        assert_eq!(value.dim(), deriv.dim(), "column_map: derivative shape");
        assert_eq!(src.len(), value.ncols(), "column_map: source count");
        assert!(src.iter().all(|&c| c < cols), "column_map: source column out of range");
        self.push(value, Op::ColumnMap { x, src, deriv })
    }

    pub fn scalar_op(&mut self, value: f64, partials: Vec<(Var, Matrix)>) -> Var {
        for (v, p) in &partials {
            check_same_shape(self.value(*v), p, "scalar_op partial");
        }
        self.push(Matrix::from_elem((1, 1), value), Op::Scalar(partials))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.input(Matrix::from_elem((1, 1), value))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut value = 0.0;
        let mut partials = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            value += w * self.scalar(v);
            partials.push((v, Matrix::from_elem((1, 1), w)));
        }
        self.scalar_op(value, partials)
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param | Op::Detach => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, &g * *s),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| if x <= 0.0 { *d = 0.0 });
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&node.value)
                        .for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = g.row(r).dot(&y.row(r));
                        for c in 0..y.ncols() {
                            d[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let vg = self.value(*gain);
                    let cols = xhat.ncols() as f64;
                    accumulate(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(
                        &mut grads,
                        *gain,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dxhat = &g * vg;
                    let mut dx = Matrix::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let row = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = row.sum();
                        let sum_dx = row.dot(&xr);
                        let k = inv_std[r] / cols;
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = k * (cols * row[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let mut d = Matrix::zeros(self.value(*x).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        accumulate(&mut grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::GatherRows { x, idx } => {
                    let mut d = Matrix::zeros(self.value(*x).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = d.row_mut(src);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::L2NormalizeRows { x, norms } => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot = g.row(r).dot(&y.row(r));
                        for c in 0..y.ncols() {
                            d[[r, c]] = (g[[r, c]] - y[[r, c]] * dot) / norms[r];
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Sum(x) => {
                    let d = Matrix::from_elem(self.value(*x).dim(), g[[0, 0]]);
                    accumulate(&mut grads, *x, d);
                }
                Op::ColumnMap { x, src, deriv } => {
                    let mut d = Matrix::zeros(self.value(*x).dim());
                    for r in 0..g.nrows() {
                        for (k, &c) in src.iter().enumerate() {
                            d[[r, c]] += g[[r, k]] * deriv[[r, k]];
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Scalar(partials) => {
                    let up = g[[0, 0]];
                    for (v, p) in partials {
                        accumulate(&mut grads, *v, p * up);
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the
    /// root.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds `scale ·` the parameter gradients of this pass into the store's
    /// accumulators.
    pub fn accumulate_params(&self, graph: &Graph, store: &mut ParamStore, scale: f64) {
        for (&id, &var) in &graph.params {
            if let Some(g) = self.wrt(var) {
                store.grad_mut(id).scaled_add(scale, g);
            }
        }
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

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(xᵢ)` with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
