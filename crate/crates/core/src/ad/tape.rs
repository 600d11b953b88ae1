use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::gemm;
use super::{Activation, AdError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Activate(usize, Activation),
    ActivationDerivative(usize, Activation),
    MinScalar(usize, f64),
    Powf(usize, f64),
    Abs(usize),
    Sum(usize),
    RowSum(usize),
    SquaredNorm(usize),
    Norm(usize),
    Dot(usize, usize),
    RowDot(usize, usize),
    SliceCols { src: usize, start: usize },
    ConcatCols(Vec<usize>),
    NormalizeRows { src: usize, eps: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Activate(_, a) => a.name(),
            Op::ActivationDerivative(..) => "activation_derivative",
            Op::MinScalar(..) => "min_scalar",
            Op::Powf(..) => "powf",
            Op::Abs(..) => "abs",
            Op::Sum(..) => "sum",
            Op::RowSum(..) => "row_sum",
            Op::SquaredNorm(..) => "squared_norm",
            Op::Norm(..) => "norm",
            Op::Dot(..) => "dot",
            Op::RowDot(..) => "row_dot",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::NormalizeRows { .. } => "normalize_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Every operation evaluates eagerly and appends a node, so the node list is
/// always in topological order. Leaves are trainable inputs; constants never
/// receive gradients and any subgraph depending only on constants is skipped
/// during the reverse sweep.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or zeros when the output does not
    /// depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        assert_eq!(var.tape, self.tape, "variable belongs to another tape");
        match &self.grads[var.index] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.index].clone()),
        }
    }

    /// Like [`Gradients::wrt`] but borrows; `None` when no gradient reached `var`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        assert_eq!(var.tape, self.tape, "variable belongs to another tape");
        self.grads[var.index].as_ref()
    }

    /// Appends the gradient of `var` (zeros if unreached) to `out`.
    pub fn extend_into(&self, var: Var, out: &mut Vec<f64>) {
        assert_eq!(var.tape, self.tape, "variable belongs to another tape");
        match &self.grads[var.index] {
            Some(g) => out.extend_from_slice(g.data()),
            None => out.extend(std::iter::repeat_n(
                0.0,
                self.shapes[var.index].iter().product(),
            )),
        }
    }
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> AdError {
    AdError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(), AdError> {
    if t.rank() == 2 {
        Ok(())
    } else {
        Err(AdError::NotMatrix {
            op,
            shape: t.shape().to_vec(),
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize, AdError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AdError::ForeignVar);
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<(usize, &Tensor), AdError> {
        let i = self.check(v)?;
        Ok((i, &self.nodes[i].value))
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            Op::ConcatCols(ids) => ids.iter().any(|&i| self.nodes[i].needs_grad),
            other => inputs(other)
                .into_iter()
                .flatten()
                .any(|i| self.nodes[i].needs_grad),
        };
        let index = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var {
            tape: self.id,
            index,
        })
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, AdError> {
        self.push(Op::Leaf, value)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, AdError> {
        self.push(Op::Constant, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.node(v).expect("variable belongs to this tape").1
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v).expect("variable belongs to this tape")].needs_grad
    }

    /// `a @ b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let (ib, tb) = self.node(b)?;
        require_matrix("matmul", ta)?;
        require_matrix("matmul", tb)?;
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, out.data_mut());
        self.push(Op::MatMul(ia, ib), out)
    }

    /// `a @ bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let (ib, tb) = self.node(b)?;
        require_matrix("matmul_bt", ta)?;
        require_matrix("matmul_bt", tb)?;
        if ta.cols() != tb.cols() {
            return Err(shape_err("matmul_bt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = Tensor::zeros(vec![m, n]);
        gemm(m, k, n, ta.data(), false, tb.data(), true, 0.0, out.data_mut());
        self.push(Op::MatMulBt(ia, ib), out)
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let (ib, tb) = self.node(b)?;
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let out = ta.zip_map(tb, f);
        self.push(op(ia, ib), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.elementwise("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.elementwise("sub", a, b, Op::Sub, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.elementwise("mul", a, b, Op::Mul, |x, y| x * y)
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        op: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let (ir, tr) = self.node(row)?;
        require_matrix(name, ta)?;
        if tr.shape() != [1, ta.cols()] {
            return Err(shape_err(name, ta, tr));
        }
        let cols = ta.cols();
        let r = tr.data();
        let data = ta
            .data()
            .chunks_exact(cols.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op(ia, ir), out)
    }

    /// Adds a `[1, n]` row to every row of `a: [m, n]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AdError> {
        self.row_broadcast("add_row", a, row, Op::AddRow, |x, y| x + y)
    }

    /// Multiplies every row of `a: [m, n]` elementwise by a `[1, n]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AdError> {
        self.row_broadcast("mul_row", a, row, Op::MulRow, |x, y| x * y)
    }

    /// Scales row `i` of `a: [m, n]` by `col[i]` for `col: [m, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let (ic, tc) = self.node(col)?;
        require_matrix("mul_col", ta)?;
        if tc.shape() != [ta.rows(), 1] {
            return Err(shape_err("mul_col", ta, tc));
        }
        let cols = ta.cols();
        let mut data = ta.data().to_vec();
        if cols > 0 {
            for (chunk, &s) in data.chunks_exact_mut(cols).zip(tc.data()) {
                for v in chunk {
                    *v *= s;
                }
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::MulCol(ia, ic), out)
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = ta.map(|x| x * s);
        self.push(Op::Scale(ia, s), out)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = ta.map(|x| x + s);
        self.push(Op::AddScalar(ia), out)
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var, AdError> {
        if act == Activation::Identity {
            return Ok(a);
        }
        let (ia, ta) = self.node(a)?;
        let out = ta.map(|x| act.apply(x));
        self.push(Op::Activate(ia, act), out)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AdError> {
        self.activate(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AdError> {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AdError> {
        self.activate(a, Activation::Relu)
    }

    /// Elementwise `σ'(a)` for the given activation, differentiable through
    /// `σ''`. This is what lets input-gradient networks be built from
    /// first-order nodes only.
    pub fn activation_derivative(&mut self, a: Var, act: Activation) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = ta.map(|x| act.derivative(x));
        self.push(Op::ActivationDerivative(ia, act), out)
    }

    /// Elementwise `min(a, c)`.
    pub fn min_scalar(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = ta.map(|x| x.min(c));
        self.push(Op::MinScalar(ia, c), out)
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = ta.map(|x| x.powf(exponent));
        self.push(Op::Powf(ia, exponent), out)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = ta.map(f64::abs);
        self.push(Op::Abs(ia), out)
    }

    /// Sum of all elements, as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = Tensor::scalar(ta.data().iter().sum());
        self.push(Op::Sum(ia), out)
    }

    /// Per-row sums of `a: [m, n]`, as `[m, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        require_matrix("row_sum", ta)?;
        let data = (0..ta.rows()).map(|r| ta.row_slice(r).iter().sum()).collect();
        let out = Tensor::matrix(ta.rows(), 1, data);
        self.push(Op::RowSum(ia), out)
    }

    /// `‖a‖²` over all elements.
    pub fn squared_norm(&mut self, a: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = Tensor::scalar(ta.data().iter().map(|x| x * x).sum());
        self.push(Op::SquaredNorm(ia), out)
    }

    /// `‖a‖` over all elements.
    pub fn norm(&mut self, a: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let out = Tensor::scalar(ta.data().iter().map(|x| x * x).sum::<f64>().sqrt());
        self.push(Op::Norm(ia), out)
    }

    /// Full inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let (ib, tb) = self.node(b)?;
        if ta.shape() != tb.shape() {
            return Err(shape_err("dot", ta, tb));
        }
        let out = Tensor::scalar(ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum());
        self.push(Op::Dot(ia, ib), out)
    }

    /// Row-wise inner products `[m, n] · [m, n] -> [m, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        let (ib, tb) = self.node(b)?;
        require_matrix("row_dot", ta)?;
        if ta.shape() != tb.shape() {
            return Err(shape_err("row_dot", ta, tb));
        }
        let data = (0..ta.rows())
            .map(|r| {
                ta.row_slice(r)
                    .iter()
                    .zip(tb.row_slice(r))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let out = Tensor::matrix(ta.rows(), 1, data);
        self.push(Op::RowDot(ia, ib), out)
    }

    /// Columns `start..start + len` of `a: [m, n]`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        require_matrix("slice_cols", ta)?;
        if start + len > ta.cols() {
            return Err(AdError::SliceOutOfRange {
                start,
                len,
                cols: ta.cols(),
            });
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
        }
        let out = Tensor::matrix(ta.rows(), len, data);
        self.push(Op::SliceCols { src: ia, start }, out)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let first = *parts.first().ok_or(AdError::EmptyConcat)?;
        let rows = {
            let t = self.node(first)?.1;
            require_matrix("concat_cols", t)?;
            t.rows()
        };
        let mut ids = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (i, t) = self.node(p)?;
            require_matrix("concat_cols", t)?;
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(first), t));
            }
            total += t.cols();
            ids.push(i);
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &ids {
                data.extend_from_slice(self.nodes[i].value.row_slice(r));
            }
        }
        let out = Tensor::matrix(rows, total, data);
        self.push(Op::ConcatCols(ids), out)
    }

    /// Scales each row to unit L2 norm. Rows whose norm is below `eps` map to
    /// the zero vector and pass no gradient.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var, AdError> {
        let (ia, ta) = self.node(a)?;
        require_matrix("normalize_rows", ta)?;
        let mut data = ta.data().to_vec();
        let cols = ta.cols();
        if cols > 0 {
            for chunk in data.chunks_exact_mut(cols) {
                let n = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
                for v in chunk.iter_mut() {
                    *v = if n < eps { 0.0 } else { *v / n };
                }
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(Op::NormalizeRows { src: ia, eps }, out)
    }

    /// Reverse sweep from a one-element output with unit seed.
    pub fn backward(&self, output: Var) -> Result<Gradients, AdError> {
        let i = self.check_for_backward(output)?;
        let shape = self.nodes[i].value.shape().to_vec();
        if self.nodes[i].value.len() != 1 {
            return Err(AdError::NonScalarOutput { shape });
        }
        self.backward_with_seed(output, Tensor::filled(shape, 1.0))
    }

    /// Reverse sweep seeded with an explicit output cotangent.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor) -> Result<Gradients, AdError> {
        let out = self.check_for_backward(output)?;
        if seed.shape() != self.nodes[out].value.shape() {
            return Err(shape_err("backward seed", &self.nodes[out].value, &seed));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out + 1];
        grads[out] = Some(seed);
        for i in (0..=out).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            self.propagate(i, g, lower);
            if !matches!(self.nodes[i].op, Op::Leaf) {
                upper[0] = None;
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(AdError::NonFiniteGradient { node: i });
                }
            }
        }
        let mut shapes: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        shapes.truncate(out + 1);
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }

    fn check_for_backward(&self, output: Var) -> Result<usize, AdError> {
        if self.nodes.is_empty() {
            return Err(AdError::EmptyTape);
        }
        self.check(output)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |j: usize| &nodes[j].value;
        let wants = |j: usize| nodes[j].needs_grad;
        match &nodes[i].op {
            Op::Leaf | Op::Constant => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if wants(a) {
                    let buf = grad_buf(grads, a, ta);
                    gemm(m, n, k, g.data(), false, tb.data(), true, 1.0, buf);
                }
                if wants(b) {
                    let buf = grad_buf(grads, b, tb);
                    gemm(k, m, n, ta.data(), true, g.data(), false, 1.0, buf);
                }
            }
            &Op::MatMulBt(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if wants(a) {
                    let buf = grad_buf(grads, a, ta);
                    gemm(m, n, k, g.data(), false, tb.data(), false, 1.0, buf);
                }
                if wants(b) {
                    let buf = grad_buf(grads, b, tb);
                    gemm(n, m, k, g.data(), true, ta.data(), false, 1.0, buf);
                }
            }
            &Op::Add(a, b) => {
                if wants(a) {
                    add_into(grad_buf(grads, a, val(a)), g.data());
                }
                if wants(b) {
                    add_into(grad_buf(grads, b, val(b)), g.data());
                }
            }
            &Op::Sub(a, b) => {
                if wants(a) {
                    add_into(grad_buf(grads, a, val(a)), g.data());
                }
                if wants(b) {
                    let buf = grad_buf(grads, b, val(b));
                    for (d, &x) in buf.iter_mut().zip(g.data()) {
                        *d -= x;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let other = val(b).data();
                    let buf = grad_buf(grads, a, val(a));
                    for ((d, &x), &y) in buf.iter_mut().zip(g.data()).zip(other) {
                        *d += x * y;
                    }
                }
                if wants(b) {
                    let other = val(a).data();
                    let buf = grad_buf(grads, b, val(b));
                    for ((d, &x), &y) in buf.iter_mut().zip(g.data()).zip(other) {
                        *d += x * y;
                    }
                }
            }
            &Op::AddRow(a, r) => {
                if wants(a) {
                    add_into(grad_buf(grads, a, val(a)), g.data());
                }
                if wants(r) {
                    let cols = val(r).cols();
                    let buf = grad_buf(grads, r, val(r));
                    for chunk in g.data().chunks_exact(cols.max(1)) {
                        add_into(buf, chunk);
                    }
                }
            }
            &Op::MulRow(a, r) => {
                let cols = val(r).cols();
                if wants(a) {
                    let row = val(r).data();
                    let buf = grad_buf(grads, a, val(a));
                    for (dchunk, gchunk) in buf
                        .chunks_exact_mut(cols.max(1))
                        .zip(g.data().chunks_exact(cols.max(1)))
                    {
                        for ((d, &x), &y) in dchunk.iter_mut().zip(gchunk).zip(row) {
                            *d += x * y;
                        }
                    }
                }
                if wants(r) {
                    let av = val(a).data();
                    let buf = grad_buf(grads, r, val(r));
                    for (gchunk, achunk) in g
                        .data()
                        .chunks_exact(cols.max(1))
                        .zip(av.chunks_exact(cols.max(1)))
                    {
                        for ((d, &x), &y) in buf.iter_mut().zip(gchunk).zip(achunk) {
                            *d += x * y;
                        }
                    }
                }
            }
            &Op::MulCol(a, c) => {
                let cols = val(a).cols().max(1);
                if wants(a) {
                    let col = val(c).data();
                    let buf = grad_buf(grads, a, val(a));
                    for ((dchunk, gchunk), &s) in buf
                        .chunks_exact_mut(cols)
                        .zip(g.data().chunks_exact(cols))
                        .zip(col)
                    {
                        for (d, &x) in dchunk.iter_mut().zip(gchunk) {
                            *d += x * s;
                        }
                    }
                }
                if wants(c) {
                    let av = val(a).data();
                    let buf = grad_buf(grads, c, val(c));
                    for ((d, gchunk), achunk) in buf
                        .iter_mut()
                        .zip(g.data().chunks_exact(cols))
                        .zip(av.chunks_exact(cols))
                    {
                        *d += gchunk.iter().zip(achunk).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            &Op::Scale(a, s) => {
                if wants(a) {
                    let buf = grad_buf(grads, a, val(a));
                    for (d, &x) in buf.iter_mut().zip(g.data()) {
                        *d += s * x;
                    }
                }
            }
            &Op::AddScalar(a) => {
                if wants(a) {
                    add_into(grad_buf(grads, a, val(a)), g.data());
                }
            }
            &Op::Activate(a, act) => {
                if wants(a) {
                    let out = nodes[i].value.data();
                    let input = val(a).data();
                    let buf = grad_buf(grads, a, val(a));
                    for (((d, &x), &y), &u) in buf.iter_mut().zip(g.data()).zip(out).zip(input) {
                        *d += x * act.derivative_from_output(u, y);
                    }
                }
            }
            &Op::ActivationDerivative(a, act) => {
                if wants(a) {
                    let input = val(a).data();
                    let buf = grad_buf(grads, a, val(a));
                    for ((d, &x), &u) in buf.iter_mut().zip(g.data()).zip(input) {
                        *d += x * act.second_derivative(u);
                    }
                }
            }
            &Op::MinScalar(a, c) => {
                if wants(a) {
                    let input = val(a).data();
                    let buf = grad_buf(grads, a, val(a));
                    for ((d, &x), &u) in buf.iter_mut().zip(g.data()).zip(input) {
                        if u < c {
                            *d += x;
                        }
                    }
                }
            }
            &Op::Powf(a, e) => {
                if wants(a) {
                    let input = val(a).data();
                    let buf = grad_buf(grads, a, val(a));
                    for ((d, &x), &u) in buf.iter_mut().zip(g.data()).zip(input) {
                        *d += x * e * u.powf(e - 1.0);
                    }
                }
            }
            &Op::Abs(a) => {
                if wants(a) {
                    let input = val(a).data();
                    let buf = grad_buf(grads, a, val(a));
                    for ((d, &x), &u) in buf.iter_mut().zip(g.data()).zip(input) {
                        if u > 0.0 {
                            *d += x;
                        } else if u < 0.0 {
                            *d -= x;
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if wants(a) {
                    let s = g.data()[0];
                    for d in grad_buf(grads, a, val(a)) {
                        *d += s;
                    }
                }
            }
            &Op::RowSum(a) => {
                if wants(a) {
                    let cols = val(a).cols().max(1);
                    let buf = grad_buf(grads, a, val(a));
                    for (chunk, &s) in buf.chunks_exact_mut(cols).zip(g.data()) {
                        for d in chunk {
                            *d += s;
                        }
                    }
                }
            }
            &Op::SquaredNorm(a) => {
                if wants(a) {
                    let s = 2.0 * g.data()[0];
                    let input = val(a).data();
                    let buf = grad_buf(grads, a, val(a));
                    for (d, &u) in buf.iter_mut().zip(input) {
                        *d += s * u;
                    }
                }
            }
            &Op::Norm(a) => {
                let n = nodes[i].value.data()[0];
                if wants(a) && n > 0.0 {
                    let s = g.data()[0] / n;
                    let input = val(a).data();
                    let buf = grad_buf(grads, a, val(a));
                    for (d, &u) in buf.iter_mut().zip(input) {
                        *d += s * u;
                    }
                }
            }
            &Op::Dot(a, b) => {
                let s = g.data()[0];
                if wants(a) {
                    let other = val(b).data();
                    let buf = grad_buf(grads, a, val(a));
                    for (d, &y) in buf.iter_mut().zip(other) {
                        *d += s * y;
                    }
                }
                if wants(b) {
                    let other = val(a).data();
                    let buf = grad_buf(grads, b, val(b));
                    for (d, &y) in buf.iter_mut().zip(other) {
                        *d += s * y;
                    }
                }
            }
            &Op::RowDot(a, b) => {
                let cols = val(a).cols().max(1);
                for (target, other) in [(a, b), (b, a)] {
                    if wants(target) {
                        let ov = val(other).data();
                        let buf = grad_buf(grads, target, val(target));
                        for ((dchunk, ochunk), &s) in buf
                            .chunks_exact_mut(cols)
                            .zip(ov.chunks_exact(cols))
                            .zip(g.data())
                        {
                            for (d, &y) in dchunk.iter_mut().zip(ochunk) {
                                *d += s * y;
                            }
                        }
                    }
                }
            }
            &Op::SliceCols { src, start } => {
                if wants(src) {
                    let len = g.cols();
                    let cols = val(src).cols();
                    let buf = grad_buf(grads, src, val(src));
                    for r in 0..g.rows() {
                        add_into(&mut buf[r * cols + start..r * cols + start + len], g.row_slice(r));
                    }
                }
            }
            Op::ConcatCols(ids) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in ids {
                    let cols = val(p).cols();
                    if wants(p) {
                        let buf = grad_buf(grads, p, val(p));
                        for r in 0..g.rows() {
                            add_into(
                                &mut buf[r * cols..(r + 1) * cols],
                                &g.data()[r * total + offset..r * total + offset + cols],
                            );
                        }
                    }
                    offset += cols;
                }
            }
            &Op::NormalizeRows { src, eps } => {
                if wants(src) {
                    let cols = val(src).cols().max(1);
                    let input = val(src).data();
                    let out = nodes[i].value.data();
                    let buf = grad_buf(grads, src, val(src));
                    for (((dchunk, gchunk), xchunk), ychunk) in buf
                        .chunks_exact_mut(cols)
                        .zip(g.data().chunks_exact(cols))
                        .zip(input.chunks_exact(cols))
                        .zip(out.chunks_exact(cols))
                    {
                        let n = xchunk.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if n < eps {
                            continue;
                        }
                        let yg: f64 = ychunk.iter().zip(gchunk).map(|(y, g)| y * g).sum();
                        for ((d, &gv), &y) in dchunk.iter_mut().zip(gchunk).zip(ychunk) {
                            *d += (gv - y * yg) / n;
                        }
                    }
                }
            }
        }
    }
}

fn inputs(op: &Op) -> [Option<usize>; 2] {
    match *op {
        Op::Leaf | Op::Constant | Op::ConcatCols(_) => [None, None],
        Op::MatMul(a, b)
        | Op::MatMulBt(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::AddRow(a, b)
        | Op::MulRow(a, b)
        | Op::MulCol(a, b)
        | Op::Dot(a, b)
        | Op::RowDot(a, b) => [Some(a), Some(b)],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Activate(a, _)
        | Op::ActivationDerivative(a, _)
        | Op::MinScalar(a, _)
        | Op::Powf(a, _)
        | Op::Abs(a)
        | Op::Sum(a)
        | Op::RowSum(a)
        | Op::SquaredNorm(a)
        | Op::Norm(a) => [Some(a), None],
        Op::SliceCols { src, .. } | Op::NormalizeRows { src, .. } => [Some(src), None],
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Tensor>], j: usize, like: &Tensor) -> &'a mut [f64] {
    grads[j]
        .get_or_insert_with(|| Tensor::zeros(like.shape().to_vec()))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
