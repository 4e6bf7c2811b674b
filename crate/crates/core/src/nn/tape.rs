//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation as a node; [`Tape::backward`] walks the
//! nodes in reverse and accumulates adjoints. Nodes that do not depend on any
//! gradient-requiring leaf are never visited during the backward pass.

use super::tensor::{gemm_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// An operation with a hand-written adjoint.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Adjoints for each input given the output adjoint `grad`. Entries for
    /// inputs with `needs[i] == false` may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    RowDot(Var, Var),
    LogSumExpRows(Var),
    L2NormalizeRows(Var),
    RowNorm(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    Reshape(Var),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Below this norm, [`Tape::l2_normalize_rows`] adds the guard to the norm.
pub const NORMALIZE_GUARD: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, or zeros shaped like `like` when `v` did not influence the output.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf whose adjoint is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, rg, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::matmul_t(self.value(a), false, self.value(b), false)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul(a, b)))
    }

    /// `x + 1ᵀb` for a `1×m` row `b`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(shape_err(
                "add_row",
                format!("{:?} + {:?}", xv.shape(), bv.shape()),
            ));
        }
        let mut value = xv.clone();
        let c = value.cols();
        for r in 0..value.rows() {
            for (o, bb) in value.data_mut()[r * c..(r + 1) * c]
                .iter_mut()
                .zip(bv.data())
            {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, rg, Op::AddRow(x, b)))
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_parts(av.rows(), av.cols(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, node))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Scales row `i` of `x` by `c[i]` for an `n×1` column `c`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(c));
        if cv.cols() != 1 || cv.rows() != xv.rows() {
            return Err(shape_err(
                "mul_col",
                format!("{:?} * {:?}", xv.shape(), cv.shape()),
            ));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let s = cv.data()[r];
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.rg(&[x, c]);
        Ok(self.push(value, rg, Op::MulCol(x, c)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, crate::special::sigmoid, Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    /// Elementwise clamp; the adjoint is zero where the bound is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.len() as f64);
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::Mean(x))
    }

    /// Row sums as an `n×1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let value = Tensor::column(data);
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::SumCols(x))
    }

    /// Row-wise dot products as an `n×1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let value = Tensor::column(data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, rg, Op::RowDot(a, b)))
    }

    /// Row-wise `ln Σ_j e^{x_ij}` as an `n×1` column, max-shifted.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows())
            .map(|r| crate::special::log_sum_exp(xv.row(r)))
            .collect();
        let value = Tensor::column(data);
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::LogSumExpRows(x))
    }

    /// Projects each row onto the unit sphere. Rows with norm below
    /// [`NORMALIZE_GUARD`] are divided by `‖v‖ + guard` instead.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = guarded_norm(row);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::L2NormalizeRows(x))
    }

    /// `√(‖x_i‖² + eps)` per row, smooth at zero.
    pub fn row_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows())
            .map(|r| (xv.row(r).iter().map(|v| v * v).sum::<f64>() + eps).sqrt())
            .collect();
        let value = Tensor::column(data);
        let rg = self.rg(&[x]);
        self.push(value, rg, Op::RowNorm(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Tensor::from_parts(rows, cols, data);
        let rg = self.rg(parts);
        Ok(self.push(value, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Row `r` of the output is row `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(bad) = index.iter().find(|&&i| i >= xv.rows()) {
            return Err(shape_err(
                "gather_rows",
                format!("row {bad} of {}", xv.rows()),
            ));
        }
        let mut data = Vec::with_capacity(index.len() * xv.cols());
        for &i in &index {
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor::from_parts(index.len(), xv.cols(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::GatherRows(x, index)))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(shape_err(
                "slice_rows",
                format!("{start}..{end} of {}", xv.rows()),
            ));
        }
        let c = xv.cols();
        let value = Tensor::from_parts(end - start, c, xv.data()[start * c..end * c].to_vec());
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::SliceRows(x, start)))
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let xv = self.value(x);
        if rows * cols != xv.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> [{rows}, {cols}]", xv.shape()),
            ));
        }
        let value = Tensor::from_parts(rows, cols, xv.data().to_vec());
        let rg = self.rg(&[x]);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Records a custom operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(inputs);
        self.push(value, rg, Op::Custom(inputs.to_vec(), op))
    }

    /// Adjoints of the `1×1` node `out` with respect to every upstream node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("output shape {:?}", self.value(out).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=out.0).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        let zip_map = |a: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
            Tensor::from_parts(
                a.rows(),
                a.cols(),
                a.data().iter().enumerate().map(|(i, &x)| f(i, x)).collect(),
            )
        };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(
                        *a,
                        Tensor::matmul_t(g, false, val(*b), true).expect("matmul adjoint"),
                    );
                }
                if needs(*b) {
                    let mut db = Tensor::zeros(val(*b).rows(), val(*b).cols());
                    gemm_into(val(*a), true, g, false, &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::AddRow(x, b) => {
                if needs(*x) {
                    acc(*x, g.clone());
                }
                if needs(*b) {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(*a, g.clone());
                }
                if needs(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(*a, g.clone());
                }
                if needs(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = val(*b).data();
                    acc(*a, zip_map(g, &|i, gv| gv * bv[i]));
                }
                if needs(*b) {
                    let av = val(*a).data();
                    acc(*b, zip_map(g, &|i, gv| gv * av[i]));
                }
            }
            Op::MulCol(x, c) => {
                let (xv, cv) = (val(*x), val(*c));
                if needs(*x) {
                    let cols = xv.cols();
                    acc(*x, zip_map(g, &|i, gv| gv * cv.data()[i / cols]));
                }
                if needs(*c) {
                    let data = (0..xv.rows())
                        .map(|r| xv.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*c, Tensor::column(data));
                }
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Exp(x) => acc(*x, zip_map(g, &|i, gv| gv * out.data()[i])),
            Op::Ln(x) => {
                let xv = val(*x).data();
                acc(*x, zip_map(g, &|i, gv| gv / xv[i]));
            }
            Op::Sqrt(x) => acc(*x, zip_map(g, &|i, gv| 0.5 * gv / out.data()[i])),
            Op::Sigmoid(x) => acc(
                *x,
                zip_map(g, &|i, gv| {
                    let s = out.data()[i];
                    gv * s * (1.0 - s)
                }),
            ),
            Op::LeakyRelu(x, slope) => {
                let xv = val(*x).data();
                acc(
                    *x,
                    zip_map(g, &|i, gv| if xv[i] > 0.0 { gv } else { gv * slope }),
                );
            }
            Op::Clamp(x, lo, hi) => {
                let xv = val(*x).data();
                acc(
                    *x,
                    zip_map(g, &|i, gv| {
                        if xv[i] > *lo && xv[i] < *hi {
                            gv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Sum(x) => {
                let xv = val(*x);
                acc(*x, Tensor::filled(xv.rows(), xv.cols(), g.item()));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                acc(
                    *x,
                    Tensor::filled(xv.rows(), xv.cols(), g.item() / xv.len() as f64),
                );
            }
            Op::SumCols(x) => {
                let xv = val(*x);
                let cols = xv.cols();
                acc(*x, zip_map(xv, &|i, _| g.data()[i / cols]));
            }
            Op::RowDot(a, b) => {
                let cols = val(*a).cols();
                if needs(*a) {
                    let bv = val(*b).data();
                    acc(*a, zip_map(val(*b), &|i, _| g.data()[i / cols] * bv[i]));
                }
                if needs(*b) {
                    let av = val(*a).data();
                    acc(*b, zip_map(val(*a), &|i, _| g.data()[i / cols] * av[i]));
                }
            }
            Op::LogSumExpRows(x) => {
                let xv = val(*x);
                let cols = xv.cols();
                acc(
                    *x,
                    zip_map(xv, &|i, v| {
                        let r = i / cols;
                        g.data()[r] * (v - out.data()[r]).exp()
                    }),
                );
            }
            Op::L2NormalizeRows(x) => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let ng = guarded_norm(row);
                    let gr = g.row(r);
                    let xg: f64 = row.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let coef = if n > 0.0 { xg / (ng * ng * n) } else { 0.0 };
                    for ((o, &xi), &gi) in dx.row_mut(r).iter_mut().zip(row).zip(gr) {
                        *o = gi / ng - coef * xi;
                    }
                }
                acc(*x, dx);
            }
            Op::RowNorm(x) => {
                let xv = val(*x);
                let cols = xv.cols();
                acc(
                    *x,
                    zip_map(xv, &|i, v| g.data()[i / cols] * v / out.data()[i / cols]),
                );
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let c = pv.cols();
                    if needs(*p) {
                        let mut dp = Tensor::zeros(pv.rows(), c);
                        for r in 0..pv.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        acc(*p, dp);
                    }
                    offset += c;
                }
            }
            Op::GatherRows(x, index) => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*x, dx);
            }
            Op::SliceRows(x, start) => {
                let xv = val(*x);
                let c = xv.cols();
                let mut dx = Tensor::zeros(xv.rows(), c);
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*x, dx);
            }
            Op::Reshape(x) => {
                let xv = val(*x);
                acc(
                    *x,
                    Tensor::from_parts(xv.rows(), xv.cols(), g.data().to_vec()),
                );
            }
            Op::Custom(inputs, op) => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let need: Vec<bool> = inputs.iter().map(|v| needs(*v)).collect();
                let adj = op.backward(&values, out, g, &need);
                for ((v, d), n) in inputs.iter().zip(adj).zip(need) {
                    if let (Some(d), true) = (d, n) {
                        acc(*v, d);
                    }
                }
            }
        }
    }
}

pub(crate) fn guarded_norm(row: &[f64]) -> f64 {
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < NORMALIZE_GUARD {
        n + NORMALIZE_GUARD
    } else {
        n
    }
}
