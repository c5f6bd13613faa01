use std::sync::Arc;

use super::tensor::{broadcast_index, broadcast_shape, gemm, Tensor};
use super::{GradError, Gradients, ParamId, ParamStore};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Constant sparse matrix in compressed-row form, used for graph propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds from a dense row-major matrix, dropping exact zeros.
    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..n_rows {
            for j in 0..n_cols {
                let v = dense[i * n_cols + j];
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                out[i * self.n_cols + self.indices[p]] += self.values[p];
            }
        }
        out
    }

    /// `y = A x` for a row-major `x` of shape `[n_cols, f]`.
    pub fn matmul_dense(&self, x: &[f64], f: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows * f];
        for i in 0..self.n_rows {
            let yr = &mut y[i * f..(i + 1) * f];
            for p in self.indptr[i]..self.indptr[i + 1] {
                let v = self.values[p];
                let xr = &x[self.indices[p] * f..(self.indices[p] + 1) * f];
                for (a, b) in yr.iter_mut().zip(xr) {
                    *a += v * b;
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Log,
    Relu,
    Abs,
    Sqrt,
    Square,
}

#[derive(Debug, Clone)]
enum GatherSource {
    Param(ParamId),
    Node(Var),
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Gather { src: GatherSource, rows: Vec<usize>, row_len: usize, src_shape: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Unary(Var, Unary),
    Softmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    L2Norm(Var),
    SpMM { a: Arc<Csr>, x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape recording a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order so the tape is already a
/// topological order. A graph is single-use: after [`Graph::backward`] it is
/// consumed.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: Vec<(ParamId, Var)>,
    consumed: bool,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> GradError {
    GradError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Splits a shape around `axis` into (outer, dim, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant (non-differentiated) input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    /// Parameter leaf; repeated calls for one id share a node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.param_nodes.push((id, v));
        v
    }

    /// Selects rows (first axis) of a parameter without materializing the rest.
    pub fn gather_param(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        rows: &[usize],
    ) -> Result<Var, GradError> {
        let t = store.get(id);
        let (shape, data) = gather_rows(t, rows)?;
        let row_len = t.len() / t.shape()[0].max(1);
        let src_shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Gather {
                src: GatherSource::Param(id),
                rows: rows.to_vec(),
                row_len,
                src_shape,
            },
        ))
    }

    /// Selects rows (first axis) of a node.
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var, GradError> {
        let t = self.value(x);
        let (shape, data) = gather_rows(t, rows)?;
        let row_len = t.len() / t.shape()[0].max(1);
        let src_shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Gather {
                src: GatherSource::Node(x),
                rows: rows.to_vec(),
                row_len,
                src_shape,
            },
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let da = self.value(a).data();
        let db = self.value(b).data();
        if sa == sb {
            let data = da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(sa.to_vec(), data);
        }
        let out = broadcast_shape(sa, sb).ok_or_else(|| shape_err(name, sa, sb))?;
        let ia = broadcast_index(sa, &out).ok_or_else(|| shape_err(name, sa, sb))?;
        let ib = broadcast_index(sb, &out).ok_or_else(|| shape_err(name, sa, sb))?;
        let data = ia.iter().zip(&ib).map(|(&i, &j)| f(da[i], db[j])).collect();
        Tensor::new(out, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let t = self.binary(a, b, "div", |x, y| x / y)?;
        Ok(self.push(t, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| -x);
        self.push(t, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    /// `a[..., m, k] x b[k, n] -> [..., m, n]`; leading axes of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (k, n) = (sb[0], sb[1]);
        let m = self.value(a).len() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let mut shape = sa.clone();
        if shape.len() == 1 {
            shape = vec![1, n];
        } else {
            *shape.last_mut().unwrap() = n;
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b)))
    }

    /// Batched product `a[B, m, k] x b[B, k, n]`, or `a x b^T` with `b[B, n, k]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, GradError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("bmm", &sa, &sb));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(shape_err("bmm", &sa, &sb));
        }
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            let ab = &da[i * m * k..(i + 1) * m * k];
            let bb = &db[i * k * n..(i + 1) * k * n];
            let strides = if trans_b {
                (1, k as isize)
            } else {
                (n as isize, 1)
            };
            gemm(
                m,
                k,
                n,
                ab,
                (k as isize, 1),
                bb,
                strides,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        Ok(self.push(Tensor::new(vec![bs, m, n], out)?, Op::Bmm { a, b, trans_b }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, GradError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(shape_err("transpose", &s, &[]));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let data = transpose_blocks(self.value(a).data(), r, c);
        let mut shape = s.clone();
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        Ok(self.push(Tensor::new(shape, data)?, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let data: Vec<f64> = t.data().chunks(c.max(1)).map(|r| r.iter().sum()).collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.push(Tensor::new(shape, data).unwrap(), Op::SumLast(a))
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Relu => |x| x.max(0.0),
            Unary::Abs => f64::abs,
            Unary::Sqrt => f64::sqrt,
            Unary::Square => |x| x * x,
        };
        let t = self.value(a).map(f);
        self.push(t, Op::Unary(a, kind))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }
    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Log)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sqrt)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row, row.len());
        }
        let t = Tensor::new(t.shape().to_vec(), out).unwrap();
        self.push(t, Op::Softmax(a))
    }

    /// Softmax over the last axis of `[..., n, n]` score blocks where row `i`
    /// only sees columns `j <= i`; masked weights are exactly zero.
    pub fn softmax_causal(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        let s = t.shape();
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(shape_err("softmax_causal", s, &[]));
        }
        let n = s[s.len() - 1];
        let mut out = t.data().to_vec();
        for (idx, row) in out.chunks_mut(n.max(1)).enumerate() {
            let i = idx % n;
            softmax_in_place(row, i + 1);
            row[i + 1..].iter_mut().for_each(|v| *v = 0.0);
        }
        let t = Tensor::new(s.to_vec(), out)?;
        Ok(self.push(t, Op::Softmax(a)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, GradError> {
        let first = self
            .nodes
            .get(parts.first().ok_or(GradError::EmptyInput("concat"))?.0)
            .unwrap()
            .value
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, GradError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(shape_err("slice", &s, &[axis, start, end]));
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let width = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&src[base..base + width]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start }))
    }

    /// Euclidean norm over the last axis (kept with size 1).
    pub fn l2norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let data: Vec<f64> = t
            .data()
            .chunks(c.max(1))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.push(Tensor::new(shape, data).unwrap(), Op::L2Norm(a))
    }

    /// Constant sparse matrix times a `[n_cols, f]` node.
    pub fn spmm(&mut self, a: &Arc<Csr>, x: Var) -> Result<Var, GradError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != a.n_cols {
            return Err(shape_err("spmm", &[a.n_rows, a.n_cols], &s));
        }
        let y = a.matmul_dense(self.value(x).data(), s[1]);
        Ok(self.push(
            Tensor::new(vec![a.n_rows, s[1]], y)?,
            Op::SpMM { a: a.clone(), x },
        ))
    }

    /// Reverse sweep from a scalar output, returning parameter gradients.
    pub fn backward(&mut self, out: Var) -> Result<Gradients, GradError> {
        self.backward_into(out, None)
    }

    /// Like [`Graph::backward`] but also returns the gradient of every node
    /// listed in `wrt` (used to inspect gradients of intermediate inputs).
    pub fn backward_with_inputs(
        &mut self,
        out: Var,
        wrt: &[Var],
    ) -> Result<(Gradients, Vec<Tensor>), GradError> {
        let mut node_grads = Vec::new();
        let g = self.backward_into(out, Some((wrt, &mut node_grads)))?;
        Ok((g, node_grads))
    }

    fn backward_into(
        &mut self,
        out: Var,
        wrt: Option<(&[Var], &mut Vec<Tensor>)>,
    ) -> Result<Gradients, GradError> {
        if self.consumed {
            return Err(GradError::GraphConsumed);
        }
        if self.value(out).len() != 1 {
            return Err(GradError::NonScalarOutput(self.shape(out).to_vec()));
        }
        self.consumed = true;
        let n = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[out.0] = Some(vec![1.0]);
        let mut result = Gradients::default();
        let mut keep: Vec<Option<Vec<f64>>> = Vec::new();
        if let Some((vars, _)) = &wrt {
            keep = vec![None; vars.len()];
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some((vars, _)) = &wrt {
                for (k, v) in vars.iter().enumerate() {
                    if v.0 == i {
                        keep[k] = Some(g.clone());
                    }
                }
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => result.accumulate(*pid, node.value.shape(), &g),
                Op::Gather {
                    src,
                    rows,
                    row_len,
                    src_shape,
                } => match src {
                    GatherSource::Param(pid) => {
                        result.scatter_rows(*pid, src_shape, rows, *row_len, &g);
                    }
                    GatherSource::Node(x) => {
                        let len = self.value(*x).len();
                        let acc = grad_slot(&mut grads, *x, len);
                        for (k, &r) in rows.iter().enumerate() {
                            let dst = &mut acc[r * row_len..(r + 1) * row_len];
                            for (d, s) in dst.iter_mut().zip(&g[k * row_len..(k + 1) * row_len]) {
                                *d += s;
                            }
                        }
                    }
                },
                Op::Add(a, b) => {
                    self.reduce_broadcast(&mut grads, *a, &node.value, &g, 1.0);
                    self.reduce_broadcast(&mut grads, *b, &node.value, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.reduce_broadcast(&mut grads, *a, &node.value, &g, 1.0);
                    self.reduce_broadcast(&mut grads, *b, &node.value, &g, -1.0);
                }
                Op::Mul(a, b) | Op::Div(a, b) => {
                    let is_div = matches!(node.op, Op::Div(..));
                    let out_shape = node.value.shape();
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ia = index_map(va.shape(), out_shape);
                    let ib = index_map(vb.shape(), out_shape);
                    let (da, db) = (va.data(), vb.data());
                    let mut ga = vec![0.0; da.len()];
                    let mut gb = vec![0.0; db.len()];
                    for (k, gk) in g.iter().enumerate() {
                        let (ja, jb) = (ia.at(k), ib.at(k));
                        if is_div {
                            ga[ja] += gk / db[jb];
                            gb[jb] -= gk * da[ja] / (db[jb] * db[jb]);
                        } else {
                            ga[ja] += gk * db[jb];
                            gb[jb] += gk * da[ja];
                        }
                    }
                    add_into(grad_slot(&mut grads, *a, da.len()), &ga, 1.0);
                    add_into(grad_slot(&mut grads, *b, db.len()), &gb, 1.0);
                }
                Op::Neg(a) => add_into(grad_slot(&mut grads, *a, g.len()), &g, -1.0),
                Op::Scale(a, c) => add_into(grad_slot(&mut grads, *a, g.len()), &g, *c),
                Op::AddScalar(a) | Op::Reshape(a) => {
                    add_into(grad_slot(&mut grads, *a, g.len()), &g, 1.0)
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (k, n) = (vb.shape()[0], vb.shape()[1]);
                    let m = va.len() / k.max(1);
                    // dA = dY B^T
                    let ga = grad_slot(&mut grads, *a, m * k);
                    gemm(m, n, k, &g, (n as isize, 1), vb.data(), (1, n as isize), 1.0, ga);
                    // dB = A^T dY
                    let gb = grad_slot(&mut grads, *b, k * n);
                    gemm(k, m, n, va.data(), (1, k as isize), &g, (n as isize, 1), 1.0, gb);
                }
                Op::Bmm { a, b, trans_b } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (bs, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                    let n = node.value.shape()[2];
                    let mut ga = vec![0.0; va.len()];
                    let mut gb = vec![0.0; vb.len()];
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &va.data()[i * m * k..(i + 1) * m * k];
                        let bi = &vb.data()[i * k * n..(i + 1) * k * n];
                        let ga_i = &mut ga[i * m * k..(i + 1) * m * k];
                        let gb_i = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // b stored [n, k]; y = a b^T; da = dy b; db = dy^T a
                            gemm(m, n, k, gi, (n as isize, 1), bi, (k as isize, 1), 1.0, ga_i);
                            gemm(n, m, k, gi, (1, n as isize), ai, (k as isize, 1), 1.0, gb_i);
                        } else {
                            gemm(m, n, k, gi, (n as isize, 1), bi, (1, n as isize), 1.0, ga_i);
                            gemm(k, m, n, ai, (1, k as isize), gi, (n as isize, 1), 1.0, gb_i);
                        }
                    }
                    add_into(grad_slot(&mut grads, *a, ga.len()), &ga, 1.0);
                    add_into(grad_slot(&mut grads, *b, gb.len()), &gb, 1.0);
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    let back = transpose_blocks(&g, r, c);
                    add_into(grad_slot(&mut grads, *a, back.len()), &back, 1.0);
                }
                Op::Sum(a) => {
                    let len = self.value(*a).len();
                    grad_slot(&mut grads, *a, len).iter_mut().for_each(|v| *v += g[0]);
                }
                Op::Mean(a) => {
                    let len = self.value(*a).len();
                    let d = g[0] / len.max(1) as f64;
                    grad_slot(&mut grads, *a, len).iter_mut().for_each(|v| *v += d);
                }
                Op::SumLast(a) => {
                    let va = self.value(*a);
                    let c = va.last_dim();
                    let acc = grad_slot(&mut grads, *a, va.len());
                    for (row, gi) in acc.chunks_mut(c.max(1)).zip(&g) {
                        row.iter_mut().for_each(|v| *v += gi);
                    }
                }
                Op::Unary(a, kind) => {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let acc = grad_slot(&mut grads, *a, x.len());
                    for k in 0..x.len() {
                        let d = match kind {
                            Unary::Tanh => 1.0 - y[k] * y[k],
                            Unary::Sigmoid => y[k] * (1.0 - y[k]),
                            Unary::Softplus => sigmoid(x[k]),
                            Unary::Exp => y[k],
                            Unary::Log => 1.0 / x[k],
                            Unary::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Abs => {
                                if x[k] > 0.0 {
                                    1.0
                                } else if x[k] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sqrt => 0.5 / y[k],
                            Unary::Square => 2.0 * x[k],
                        };
                        acc[k] += g[k] * d;
                    }
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let c = node.value.last_dim();
                    let acc = grad_slot(&mut grads, *a, y.len());
                    for ((yr, gr), ar) in y.chunks(c).zip(g.chunks(c)).zip(acc.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            ar[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let out_shape = node.value.shape();
                    let (outer, total, inner) = axis_split(out_shape, *axis);
                    let mut offset = 0;
                    for p in parts {
                        let d = self.value(*p).shape()[*axis];
                        let len = self.value(*p).len();
                        let acc = grad_slot(&mut grads, *p, len);
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * d * inner;
                            for q in 0..d * inner {
                                acc[dst + q] += g[src + q];
                            }
                        }
                        offset += d;
                    }
                }
                Op::Slice { x, axis, start } => {
                    let in_shape = self.value(*x).shape().to_vec();
                    let (outer, dim, inner) = axis_split(&in_shape, *axis);
                    let width = node.value.shape()[*axis] * inner;
                    let acc = grad_slot(&mut grads, *x, outer * dim * inner);
                    for o in 0..outer {
                        let base = o * dim * inner + start * inner;
                        for q in 0..width {
                            acc[base + q] += g[o * width + q];
                        }
                    }
                }
                Op::L2Norm(a) => {
                    let x = self.value(*a).data();
                    let c = self.value(*a).last_dim();
                    let y = node.value.data();
                    let acc = grad_slot(&mut grads, *a, x.len());
                    for r in 0..y.len() {
                        if y[r] == 0.0 {
                            continue;
                        }
                        for k in 0..c {
                            acc[r * c + k] += g[r] * x[r * c + k] / y[r];
                        }
                    }
                }
                Op::SpMM { a, x } => {
                    let f = node.value.last_dim();
                    let len = self.value(*x).len();
                    let acc = grad_slot(&mut grads, *x, len);
                    for i in 0..a.n_rows {
                        let gr = &g[i * f..(i + 1) * f];
                        for p in a.indptr[i]..a.indptr[i + 1] {
                            let v = a.values[p];
                            let j = a.indices[p];
                            for (d, s) in acc[j * f..(j + 1) * f].iter_mut().zip(gr) {
                                *d += v * s;
                            }
                        }
                    }
                }
            }
        }
        if let Some((vars, out)) = wrt {
            for (k, v) in vars.iter().enumerate() {
                let data = keep[k]
                    .take()
                    .unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
                out.push(Tensor::new(self.shape(*v).to_vec(), data)?);
            }
        }
        Ok(result)
    }

    fn reduce_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        out: &Tensor,
        g: &[f64],
        sign: f64,
    ) {
        let xs = self.value(x).shape();
        let len = self.value(x).len();
        let acc = grad_slot(grads, x, len);
        if xs == out.shape() {
            add_into(acc, g, sign);
        } else {
            let map = index_map(xs, out.shape());
            for (k, gk) in g.iter().enumerate() {
                acc[map.at(k)] += sign * gk;
            }
        }
    }
}

enum IndexMap {
    Identity,
    Table(Vec<usize>),
}

impl IndexMap {
    #[inline]
    fn at(&self, k: usize) -> usize {
        match self {
            IndexMap::Identity => k,
            IndexMap::Table(t) => t[k],
        }
    }
}

fn index_map(shape: &[usize], out: &[usize]) -> IndexMap {
    if shape == out {
        IndexMap::Identity
    } else {
        IndexMap::Table(broadcast_index(shape, out).expect("validated in forward"))
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Result<(Vec<usize>, Vec<f64>), GradError> {
    let s = t.shape();
    if s.is_empty() {
        return Err(shape_err("gather", s, &[]));
    }
    let n = s[0];
    let row_len = if n == 0 { 0 } else { t.len() / n };
    let mut data = Vec::with_capacity(rows.len() * row_len);
    for &r in rows {
        if r >= n {
            return Err(GradError::IndexOutOfRange { index: r, len: n });
        }
        data.extend_from_slice(&t.data()[r * row_len..(r + 1) * row_len]);
    }
    let mut shape = s.to_vec();
    shape[0] = rows.len();
    Ok((shape, data))
}

fn transpose_blocks(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let block = r * c;
    let mut out = vec![0.0; src.len()];
    if block == 0 {
        return out;
    }
    for b in 0..src.len() / block {
        let s = &src[b * block..(b + 1) * block];
        let d = &mut out[b * block..(b + 1) * block];
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Softmax over the first `live` entries of `row`; the rest are untouched.
fn softmax_in_place(row: &mut [f64], live: usize) {
    let max = row[..live].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row[..live].iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row[..live].iter_mut() {
        *v /= total;
    }
}
