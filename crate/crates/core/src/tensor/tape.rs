use std::cell::RefCell;

use super::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Square,
    Relu,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `a · b`, or `a · bᵀ` when `bt`.
    MatMul { a: usize, b: usize, bt: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRowBias { a: usize, bias: usize },
    Unary(usize, Unary),
    Scale(usize, f64),
    Shift(usize),
    Sum(usize),
    Mean(usize),
    SliceCols { a: usize, start: usize },
    ConcatCols(Vec<usize>),
    SliceRows { a: usize, start: usize },
    ConcatRows(Vec<usize>),
    Broadcast(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation. Nodes are pushed after their
/// parents, so index order is a topological order and the reverse pass is a
/// single backwards sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a one-element `loss`. Fan-out contributions are
    /// summed. A loss that does not depend on any gradient leaf yields zero
    /// gradients everywhere.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];

        for i in (0..=loss.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {
                    let t = Tensor::new(node.value.shape(), g).expect("gradient shape");
                    leaf_grads[i] = Some(t);
                }
                Op::MatMul { a, b, bt } => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = node.value.shape()[1];
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        // bt: dA = G·B ; else dA = G·Bᵀ
                        gemm(m, n, k, &g, false, bv.data(), !*bt, da, true);
                    }
                    if let Some(db) = slot(&mut grads, &nodes, *b) {
                        if *bt {
                            // dB = Gᵀ·A, B is n×k
                            gemm(n, m, k, &g, true, av.data(), false, db, true);
                        } else {
                            // dB = Aᵀ·G, B is k×n
                            gemm(k, m, n, av.data(), true, &g, false, db, true);
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, &nodes, *a), &g, 1.0);
                    add_into(slot(&mut grads, &nodes, *b), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut grads, &nodes, *a), &g, 1.0);
                    add_into(slot(&mut grads, &nodes, *b), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * bi;
                        }
                    }
                    if let Some(db) = slot(&mut grads, &nodes, *b) {
                        for ((d, gi), ai) in db.iter_mut().zip(&g).zip(av) {
                            *d += gi * ai;
                        }
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        for ((d, gi), bi) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi / bi;
                        }
                    }
                    if let Some(db) = slot(&mut grads, &nodes, *b) {
                        for (((d, gi), ai), bi) in db.iter_mut().zip(&g).zip(av).zip(bv) {
                            *d -= gi * ai / (bi * bi);
                        }
                    }
                }
                Op::AddRowBias { a, bias } => {
                    add_into(slot(&mut grads, &nodes, *a), &g, 1.0);
                    if let Some(db) = slot(&mut grads, &nodes, *bias) {
                        let n = db.len();
                        for row in g.chunks(n) {
                            for (d, gi) in db.iter_mut().zip(row) {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::Unary(a, kind) => {
                    let x = nodes[*a].value.data();
                    let y = node.value.data();
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        for j in 0..da.len() {
                            da[j] += g[j] * unary_grad(*kind, x[j], y[j]);
                        }
                    }
                }
                Op::Scale(a, c) => add_into(slot(&mut grads, &nodes, *a), &g, *c),
                Op::Shift(a) => add_into(slot(&mut grads, &nodes, *a), &g, 1.0),
                Op::Sum(a) => {
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        da.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Mean(a) => {
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        let s = g[0] / da.len() as f64;
                        da.iter_mut().for_each(|d| *d += s);
                    }
                }
                Op::Broadcast(a) => {
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        da[0] += g.iter().sum::<f64>();
                    }
                }
                Op::SliceCols { a, start } => {
                    let src_cols = nodes[*a].value.cols();
                    let w = node.value.cols();
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        for (r, row) in g.chunks(w).enumerate() {
                            let off = r * src_cols + start;
                            for (d, gi) in da[off..off + w].iter_mut().zip(row) {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let mut col = 0;
                    for &p in parts {
                        let w = nodes[p].value.cols();
                        if let Some(dp) = slot(&mut grads, &nodes, p) {
                            for (r, drow) in dp.chunks_mut(w).enumerate() {
                                let off = r * total + col;
                                for (d, gi) in drow.iter_mut().zip(&g[off..off + w]) {
                                    *d += gi;
                                }
                            }
                        }
                        col += w;
                    }
                }
                Op::SliceRows { a, start } => {
                    let c = node.value.cols();
                    if let Some(da) = slot(&mut grads, &nodes, *a) {
                        let off = start * c;
                        for (d, gi) in da[off..off + g.len()].iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p].value.numel();
                        add_into(slot(&mut grads, &nodes, p), &g[off..off + len], 1.0);
                        off += len;
                    }
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

fn slot<'g>(
    grads: &'g mut [Option<Vec<f64>>],
    nodes: &[Node],
    p: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[p].requires_grad {
        return None;
    }
    Some(grads[p].get_or_insert_with(|| vec![0.0; nodes[p].value.numel()]))
}

fn add_into(dst: Option<&mut Vec<f64>>, g: &[f64], c: f64) {
    if let Some(d) = dst {
        for (di, gi) in d.iter_mut().zip(g) {
            *di += c * gi;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    (-x.abs()).exp().ln_1p() + x.max(0.0)
}

fn unary_value(kind: Unary, x: f64) -> f64 {
    match kind {
        Unary::Tanh => x.tanh(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Softplus => softplus(x),
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Square => x * x,
        Unary::Relu => x.max(0.0),
    }
}

fn unary_grad(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Softplus => sigmoid(x),
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Square => 2.0 * x,
        Unary::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Gradients of a loss with respect to every leaf on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; zeros of `v`'s shape if the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&v.shape()),
        }
    }

    pub(crate) fn take(&mut self, v: Var<'_>) -> Tensor {
        match self.grads.get_mut(v.id).and_then(Option::take) {
            Some(t) => t,
            None => Tensor::zeros(&v.shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn with<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn dim_err(&self, op: &'static str, other: &Var<'t>) -> Error {
        Error::Dimension {
            op,
            left: self.shape(),
            right: other.shape(),
        }
    }

    fn matrix_dims(&self) -> Option<(usize, usize)> {
        self.with(|t| (t.shape().len() == 2).then(|| (t.shape()[0], t.shape()[1])))
    }

    fn mm(self, other: Var<'t>, bt: bool) -> Result<Var<'t>> {
        let op = if bt { "matmul_t" } else { "matmul" };
        let ((m, k), (r, c)) = match (self.matrix_dims(), other.matrix_dims()) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(self.dim_err(op, &other)),
        };
        let (k2, n) = if bt { (c, r) } else { (r, c) };
        if k != k2 {
            return Err(self.dim_err(op, &other));
        }
        let mut out = vec![0.0; m * n];
        {
            let nodes = self.tape.nodes.borrow();
            gemm(
                m,
                k,
                n,
                nodes[self.id].value.data(),
                false,
                nodes[other.id].value.data(),
                bt,
                &mut out,
                false,
            );
        }
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul {
                a: self.id,
                b: other.id,
                bt,
            },
            rg,
        ))
    }

    /// Matrix product `self · other`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.mm(other, false)
    }

    /// `self · otherᵀ`; weights stored `out × in` are applied this way.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        self.mm(other, true)
    }

    fn zip(
        self,
        other: Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                None
            } else {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Some(Tensor::new(a.shape(), data)?)
            }
        };
        let value = value.ok_or_else(|| self.dim_err(op, &other))?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, mk(self.id, other.id), rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "div", |a, b| a / b, Op::Div)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix. This is the
    /// only broadcasting the tape performs implicitly.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let n = b.numel();
            if a.shape().len() != 2 || a.shape()[1] != n || b.rows() != 1 {
                None
            } else {
                let mut data = a.data().to_vec();
                for row in data.chunks_mut(n) {
                    for (x, bi) in row.iter_mut().zip(b.data()) {
                        *x += bi;
                    }
                }
                Some(Tensor::new(a.shape(), data)?)
            }
        };
        let value = value.ok_or_else(|| self.dim_err("add_row_bias", &bias))?;
        let rg = self.tape.requires(&[self.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::AddRowBias {
                a: self.id,
                bias: bias.id,
            },
            rg,
        ))
    }

    fn unary(self, kind: Unary) -> Var<'t> {
        let value = self.with(|t| t.map(|x| unary_value(kind, x)));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Unary(self.id, kind), rg)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    /// `log(1 + eˣ)`, evaluated as `log1p(e^{-|x|}) + max(x, 0)`.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        let bad = self.with(|t| t.data().iter().copied().find(|&x| x <= 0.0 || x.is_nan()));
        if let Some(x) = bad {
            return Err(Error::Domain(format!("log of non-positive value {x}")));
        }
        Ok(self.unary(Unary::Log))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.with(|t| t.map(|x| c * x));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Scale(self.id, c), rg)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.with(|t| t.map(|x| x + c));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Shift(self.id), rg)
    }

    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.with(Tensor::sum));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t> {
        let value = Tensor::scalar(self.with(|t| t.sum() / t.numel() as f64));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Mean(self.id), rg)
    }

    /// Repeats a one-element tensor to `shape`.
    pub fn broadcast(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.with(|t| t.is_scalar().then(|| t.item()));
        let Some(v) = v else {
            return Err(Error::Dimension {
                op: "broadcast",
                left: self.shape(),
                right: shape.to_vec(),
            });
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(Tensor::full(shape, v), Op::Broadcast(self.id), rg))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.with(|t| {
            if t.shape().len() != 2 || start >= end || end > t.cols() {
                return None;
            }
            let mut data = Vec::with_capacity(t.rows() * (end - start));
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row(r)[start..end]);
            }
            Tensor::matrix(t.rows(), end - start, data).ok()
        });
        let value = value.ok_or_else(|| Error::Dimension {
            op: "slice_cols",
            left: self.shape(),
            right: vec![start, end],
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::SliceCols { a: self.id, start }, rg))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.with(|t| {
            if t.shape().len() != 2 || start >= end || end > t.rows() {
                return None;
            }
            let c = t.cols();
            Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec()).ok()
        });
        let value = value.ok_or_else(|| Error::Dimension {
            op: "slice_rows",
            left: self.shape(),
            right: vec![start, end],
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::SliceRows { a: self.id, start }, rg))
    }

    /// Side-by-side concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let rows = vals[0].rows();
            if vals.iter().any(|v| v.shape().len() != 2 || v.rows() != rows) {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: vals[0].shape().to_vec(),
                    right: vals.iter().flat_map(|v| v.shape().to_vec()).collect(),
                });
            }
            let total: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::ConcatCols(ids), rg))
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let cols = vals[0].cols();
            if vals.iter().any(|v| v.shape().len() != 2 || v.cols() != cols) {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: vals[0].shape().to_vec(),
                    right: vals.iter().flat_map(|v| v.shape().to_vec()).collect(),
                });
            }
            let rows: usize = vals.iter().map(|v| v.rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for v in &vals {
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, cols, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::ConcatRows(ids), rg))
    }
}
