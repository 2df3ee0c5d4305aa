use std::cell::{Cell, Ref, RefCell};
use std::fmt;
use std::sync::Arc;

use super::kernels::{gemm, MatView};
use super::{axis_blocks, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sqrt,
    Recip,
    Square,
    Exp,
    Tanh,
    Gelu,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    /// `x[.., n] * s[.., 1]`
    MulCol(usize, usize),
    /// `x[.., n] + b[n]`
    AddRow(usize, usize),
    Unary(usize, Unary),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    Sum(usize),
    Mean(usize),
    SumAxis {
        x: usize,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Reshape(usize),
    Permute {
        x: usize,
        axes: Vec<usize>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph. Build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// Gradient-tracked leaf. The tensor is shared, not copied.
    pub fn param(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_arc(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_arc(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_arc(value, Op::Leaf, false)
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracks(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'g>(&'g self, xs: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::dim("concat", &base, &[axis]));
        }
        let mut total = 0;
        let values: Vec<Arc<Tensor>> = xs.iter().map(|x| self.value_of(x.id)).collect();
        for v in &values {
            let s = v.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_blocks(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|x| self.tracks(x.id));
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                xs: xs.iter().map(|x| x.id).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar root. A graph can be differentiated once.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.graph, self) {
            return Err(Error::Contract(
                "backward root belongs to another graph".into(),
            ));
        }
        if self.consumed.replace(true) {
            return Err(Error::Contract(
                "graph already consumed by a backward pass; rebuild it with a new forward".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            self.consumed.set(false);
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::from_parts(
            nodes[root.id].value.shape().to_vec(),
            vec![1.0],
        ));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
        }
        // Only tracked leaves keep their gradient.
        for (id, node) in nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[id] = None;
            } else if grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let shape_of = |i: usize| nodes[i].value.shape().to_vec();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            if nodes[*a].requires_grad {
                let d = zip_map(g.data(), bv.data(), |x, y| x * y);
                accumulate(nodes, grads, *a, Tensor::from_parts(shape_of(*a), d));
            }
            if nodes[*b].requires_grad {
                let d = zip_map(g.data(), av.data(), |x, y| x * y);
                accumulate(nodes, grads, *b, Tensor::from_parts(shape_of(*b), d));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|v| v * c)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::MulCol(x, s) => {
            let xv = &nodes[*x].value;
            let sv = &nodes[*s].value;
            let n = *xv.shape().last().unwrap();
            if nodes[*x].requires_grad {
                let mut d = g.data().to_vec();
                for (row, &sc) in d.chunks_mut(n).zip(sv.data()) {
                    row.iter_mut().for_each(|v| *v *= sc);
                }
                accumulate(nodes, grads, *x, Tensor::from_parts(shape_of(*x), d));
            }
            if nodes[*s].requires_grad {
                let d: Vec<f64> = g
                    .data()
                    .chunks(n)
                    .zip(xv.data().chunks(n))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                    .collect();
                accumulate(nodes, grads, *s, Tensor::from_parts(shape_of(*s), d));
            }
        }
        Op::AddRow(x, b) => {
            accumulate(nodes, grads, *x, g.clone());
            if nodes[*b].requires_grad {
                let n = nodes[*b].value.numel();
                let mut d = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (acc, v) in d.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(nodes, grads, *b, Tensor::from_parts(shape_of(*b), d));
            }
        }
        Op::Unary(x, kind) => {
            let xv = &nodes[*x].value;
            let d: Vec<f64> = match kind {
                Unary::Sqrt => zip_map(g.data(), out.data(), |g, y| g / (2.0 * y)),
                Unary::Recip => zip_map(g.data(), out.data(), |g, y| -g * y * y),
                Unary::Square => zip_map(g.data(), xv.data(), |g, x| 2.0 * g * x),
                Unary::Exp => zip_map(g.data(), out.data(), |g, y| g * y),
                Unary::Tanh => zip_map(g.data(), out.data(), |g, y| g * (1.0 - y * y)),
                Unary::Gelu => zip_map(g.data(), xv.data(), |g, x| g * gelu_grad(x)),
            };
            accumulate(nodes, grads, *x, Tensor::from_parts(shape_of(*x), d));
        }
        Op::MatMul { a, b, ta, tb } => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (batch, ar, ac) = mat_dims(av);
            let (_, br, bc) = mat_dims(bv);
            let (m, _) = MatView::new(ar, ac, *ta).logical();
            let (_, n) = MatView::new(br, bc, *tb).logical();
            let gview = MatView::new(m, n, false);
            let gview_t = MatView::new(m, n, true);
            let (a_len, b_len, g_len) = (ar * ac, br * bc, m * n);
            if nodes[*a].requires_grad {
                let mut d = vec![0.0; av.numel()];
                for bi in 0..batch {
                    let gs = &g.data()[bi * g_len..(bi + 1) * g_len];
                    let bs = &bv.data()[bi * b_len..(bi + 1) * b_len];
                    let ds = &mut d[bi * a_len..(bi + 1) * a_len];
                    if !ta {
                        gemm(gs, gview, bs, MatView::new(br, bc, !tb), ds, 0.0);
                    } else {
                        gemm(bs, MatView::new(br, bc, *tb), gs, gview_t, ds, 0.0);
                    }
                }
                accumulate(nodes, grads, *a, Tensor::from_parts(shape_of(*a), d));
            }
            if nodes[*b].requires_grad {
                let mut d = vec![0.0; bv.numel()];
                for bi in 0..batch {
                    let gs = &g.data()[bi * g_len..(bi + 1) * g_len];
                    let as_ = &av.data()[bi * a_len..(bi + 1) * a_len];
                    let ds = &mut d[bi * b_len..(bi + 1) * b_len];
                    if !tb {
                        gemm(as_, MatView::new(ar, ac, !ta), gs, gview, ds, 0.0);
                    } else {
                        gemm(gs, gview_t, as_, MatView::new(ar, ac, *ta), ds, 0.0);
                    }
                }
                accumulate(nodes, grads, *b, Tensor::from_parts(shape_of(*b), d));
            }
        }
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = axis_blocks(out.shape(), *axis);
            let y = out.data();
            let gd = g.data();
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |i: usize| (o * n + i) * inner + j;
                    let dot: f64 = (0..n).map(|i| gd[idx(i)] * y[idx(i)]).sum();
                    for i in 0..n {
                        d[idx(i)] = y[idx(i)] * (gd[idx(i)] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *x, Tensor::from_parts(shape_of(*x), d));
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            eps,
        } => {
            let xv = &nodes[*x].value;
            let gam = nodes[*gamma].value.data();
            let n = gam.len();
            let mut dx = vec![0.0; xv.numel()];
            let mut dgamma = vec![0.0; n];
            let mut dbeta = vec![0.0; n];
            let mut xhat = vec![0.0; n];
            let mut dxhat = vec![0.0; n];
            for ((xr, gr), dxr) in xv
                .data()
                .chunks(n)
                .zip(g.data().chunks(n))
                .zip(dx.chunks_mut(n))
            {
                let (mean, rstd) = row_stats(xr, *eps);
                for i in 0..n {
                    xhat[i] = (xr[i] - mean) * rstd;
                    dgamma[i] += gr[i] * xhat[i];
                    dbeta[i] += gr[i];
                    dxhat[i] = gr[i] * gam[i];
                }
                let m1 = dxhat.iter().sum::<f64>() / n as f64;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for i in 0..n {
                    dxr[i] = rstd * (dxhat[i] - m1 - xhat[i] * m2);
                }
            }
            accumulate(nodes, grads, *x, Tensor::from_parts(shape_of(*x), dx));
            accumulate(
                nodes,
                grads,
                *gamma,
                Tensor::from_parts(shape_of(*gamma), dgamma),
            );
            accumulate(
                nodes,
                grads,
                *beta,
                Tensor::from_parts(shape_of(*beta), dbeta),
            );
        }
        Op::Sum(x) => {
            let s = shape_of(*x);
            accumulate(nodes, grads, *x, Tensor::full(&s, g.item()));
        }
        Op::Mean(x) => {
            let s = shape_of(*x);
            let n = nodes[*x].value.numel() as f64;
            accumulate(nodes, grads, *x, Tensor::full(&s, g.item() / n));
        }
        Op::SumAxis { x, axis } => {
            let s = shape_of(*x);
            let (outer, n, inner) = axis_blocks(&s, *axis);
            let mut d = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for i in 0..n {
                    let dst = (o * n + i) * inner;
                    d[dst..dst + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(nodes, grads, *x, Tensor::from_parts(s, d));
        }
        Op::Slice { x, axis, start } => {
            let s = shape_of(*x);
            let (outer, n, inner) = axis_blocks(&s, *axis);
            let len = out.shape()[*axis];
            let mut d = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * n + start) * inner;
                d[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            accumulate(nodes, grads, *x, Tensor::from_parts(s, d));
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = axis_blocks(out.shape(), *axis);
            let mut offset = 0;
            for &xi in xs {
                let s = shape_of(xi);
                let len = s[*axis];
                if nodes[xi].requires_grad {
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[src..src + len * inner]);
                    }
                    accumulate(nodes, grads, xi, Tensor::from_parts(s, d));
                }
                offset += len;
            }
        }
        Op::Reshape(x) => {
            let s = shape_of(*x);
            accumulate(nodes, grads, *x, Tensor::from_parts(s, g.data().to_vec()));
        }
        Op::Permute { x, axes } => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            accumulate(nodes, grads, *x, permute_tensor(g, &inverse));
        }
    }
}

/// (batch, rows, cols) for a rank-2 or rank-3 tensor.
fn mat_dims(t: &Tensor) -> (usize, usize, usize) {
    match t.shape() {
        [r, c] => (1, *r, *c),
        [b, r, c] => (*b, *r, *c),
        s => unreachable!("matmul operand of rank {}", s.len()),
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn permute_tensor(t: &Tensor, axes: &[usize]) -> Tensor {
    let in_shape = t.shape();
    let rank = in_shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = t.numel();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let src = t.data();
    // Innermost output axis is walked with a fixed source stride.
    let last = rank - 1;
    let inner_len = out_shape[last];
    let inner_stride = strides[last];
    let rows = n / inner_len;
    for _ in 0..rows {
        let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data.extend((0..inner_len).map(|j| src[base + j * inner_stride]));
        for ax in (0..last).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::from_parts(out_shape, data)
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor> {
        Ref::map(self.graph.nodes.borrow(), |n| &*n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.tracks(self.id)
    }

    fn same_graph(&self, other: &Var<'g>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::Contract(
                "operands belong to different graphs".into(),
            ))
        }
    }

    fn binary(
        self,
        other: Var<'g>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'g>> {
        self.same_graph(&other)?;
        let a = self.graph.value_of(self.id);
        let b = self.graph.value_of(other.id);
        if a.shape() != b.shape() {
            return Err(Error::dim(name, a.shape(), b.shape()));
        }
        let data = zip_map(a.data(), b.data(), f);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self
            .graph
            .push(Tensor::from_parts(a.shape().to_vec(), data), op, rg))
    }

    fn unary(self, kind: Unary, f: impl Fn(f64) -> f64) -> Var<'g> {
        let a = self.graph.value_of(self.id);
        let rg = self.requires_grad();
        self.graph.push(a.map(f), Op::Unary(self.id, kind), rg)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let a = self.graph.value_of(self.id);
        let rg = self.requires_grad();
        self.graph.push(a.map(|v| v * c), Op::Scale(self.id, c), rg)
    }

    pub fn neg(self) -> Var<'g> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let a = self.graph.value_of(self.id);
        let rg = self.requires_grad();
        self.graph
            .push(a.map(|v| v + c), Op::AddScalar(self.id), rg)
    }

    /// Multiplies each trailing-axis row of `self[.., n]` by the matching
    /// entry of `s[.., 1]`.
    pub fn mul_col(self, s: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&s)?;
        let x = self.graph.value_of(self.id);
        let sv = self.graph.value_of(s.id);
        let xs = x.shape();
        let ss = sv.shape();
        if xs.len() != ss.len() || ss.last() != Some(&1) || xs[..xs.len() - 1] != ss[..ss.len() - 1]
        {
            return Err(Error::dim("mul_col", xs, ss));
        }
        let n = *xs.last().unwrap();
        let mut data = x.data().to_vec();
        for (row, &c) in data.chunks_mut(n).zip(sv.data()) {
            row.iter_mut().for_each(|v| *v *= c);
        }
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.graph.push(
            Tensor::from_parts(xs.to_vec(), data),
            Op::MulCol(self.id, s.id),
            rg,
        ))
    }

    /// Adds the vector `b[n]` to every trailing-axis row of `self[.., n]`.
    pub fn add_row(self, b: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&b)?;
        let x = self.graph.value_of(self.id);
        let bv = self.graph.value_of(b.id);
        let n = *x.shape().last().unwrap();
        if bv.rank() != 1 || bv.numel() != n {
            return Err(Error::dim("add_row", x.shape(), bv.shape()));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, c) in row.iter_mut().zip(bv.data()) {
                *v += c;
            }
        }
        let rg = self.requires_grad() || b.requires_grad();
        Ok(self.graph.push(
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::AddRow(self.id, b.id),
            rg,
        ))
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(Unary::Sqrt, f64::sqrt)
    }

    pub fn recip(self) -> Var<'g> {
        self.unary(Unary::Recip, f64::recip)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(Unary::Square, |v| v * v)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Unary::Exp, f64::exp)
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Unary::Tanh, f64::tanh)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(self) -> Var<'g> {
        self.unary(Unary::Gelu, gelu)
    }

    fn matmul_impl(
        self,
        other: Var<'g>,
        ta: bool,
        tb: bool,
        name: &'static str,
    ) -> Result<Var<'g>> {
        self.same_graph(&other)?;
        let a = self.graph.value_of(self.id);
        let b = self.graph.value_of(other.id);
        let ok_rank = (a.rank() == 2 && b.rank() == 2)
            || (a.rank() == 3 && b.rank() == 3 && a.shape()[0] == b.shape()[0]);
        if !ok_rank {
            return Err(Error::dim(name, a.shape(), b.shape()));
        }
        let (batch, ar, ac) = mat_dims(&a);
        let (_, br, bc) = mat_dims(&b);
        let av = MatView::new(ar, ac, ta);
        let bv = MatView::new(br, bc, tb);
        let (m, k) = av.logical();
        let (k2, n) = bv.logical();
        if k != k2 {
            return Err(Error::dim(name, a.shape(), b.shape()));
        }
        let mut data = vec![0.0; batch * m * n];
        for bi in 0..batch {
            gemm(
                &a.data()[bi * ar * ac..(bi + 1) * ar * ac],
                av,
                &b.data()[bi * br * bc..(bi + 1) * br * bc],
                bv,
                &mut data[bi * m * n..(bi + 1) * m * n],
                0.0,
            );
        }
        let shape = if a.rank() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(
            Tensor::from_parts(shape, data),
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            rg,
        ))
    }

    /// `[m,k] x [k,n] -> [m,n]`, or batched `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.matmul_impl(other, false, false, "matmul")
    }

    /// `self · otherᵀ` over the last two axes.
    pub fn matmul_nt(self, other: Var<'g>) -> Result<Var<'g>> {
        self.matmul_impl(other, false, true, "matmul_nt")
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let x = self.graph.value_of(self.id);
        if axis >= x.rank() {
            return Err(Error::dim("softmax", x.shape(), &[axis]));
        }
        let (outer, n, inner) = axis_blocks(x.shape(), axis);
        let src = x.data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + j;
                let max = (0..n)
                    .map(|i| src[idx(i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..n {
                    let e = (src[idx(i)] - max).exp();
                    data[idx(i)] = e;
                    total += e;
                }
                for i in 0..n {
                    data[idx(i)] /= total;
                }
            }
        }
        let rg = self.requires_grad();
        Ok(self.graph.push(
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::Softmax { x: self.id, axis },
            rg,
        ))
    }

    /// Normalizes each trailing-axis row, then applies `gamma * x̂ + beta`.
    pub fn layer_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Result<Var<'g>> {
        self.same_graph(&gamma)?;
        self.same_graph(&beta)?;
        let x = self.graph.value_of(self.id);
        let gv = self.graph.value_of(gamma.id);
        let bv = self.graph.value_of(beta.id);
        let n = *x.shape().last().unwrap();
        if gv.shape() != [n] || bv.shape() != [n] {
            return Err(Error::dim("layer_norm", x.shape(), gv.shape()));
        }
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(n) {
            let (mean, rstd) = row_stats(row, eps);
            data.extend(
                row.iter()
                    .zip(gv.data().iter().zip(bv.data()))
                    .map(|(v, (g, b))| g * (v - mean) * rstd + b),
            );
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.graph.push(
            Tensor::from_parts(x.shape().to_vec(), data),
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                eps,
            },
            rg,
        ))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(self) -> Var<'g> {
        let s = self.graph.value_of(self.id).sum();
        let rg = self.requires_grad();
        self.graph.push(Tensor::scalar(s), Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'g> {
        let x = self.graph.value_of(self.id);
        let m = x.sum() / x.numel() as f64;
        let rg = self.requires_grad();
        self.graph.push(Tensor::scalar(m), Op::Mean(self.id), rg)
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        let x = self.graph.value_of(self.id);
        if axis >= x.rank() {
            return Err(Error::dim("sum_axis", x.shape(), &[axis]));
        }
        let (outer, n, inner) = axis_blocks(x.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let src = (o * n + i) * inner;
                for j in 0..inner {
                    data[o * inner + j] += x.data()[src + j];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = 1;
        let rg = self.requires_grad();
        Ok(self.graph.push(
            Tensor::from_parts(shape, data),
            Op::SumAxis { x: self.id, axis },
            rg,
        ))
    }

    /// Euclidean norm along `axis` (kept with extent 1).
    pub fn l2_norm(self, axis: usize) -> Result<Var<'g>> {
        Ok(self.square().sum_axis(axis)?.sqrt())
    }

    /// Entries `start..start + len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let x = self.graph.value_of(self.id);
        if axis >= x.rank() || len == 0 || start + len > x.shape()[axis] {
            return Err(Error::dim("slice", x.shape(), &[axis, start, len]));
        }
        let (outer, n, inner) = axis_blocks(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * n + start) * inner;
            data.extend_from_slice(&x.data()[src..src + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let rg = self.requires_grad();
        Ok(self.graph.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let x = self.graph.value_of(self.id);
        let reshaped = (*x).clone().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.graph.push(reshaped, Op::Reshape(self.id), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'g>> {
        let x = self.graph.value_of(self.id);
        let mut seen = vec![false; x.rank()];
        let valid = axes.len() == x.rank()
            && axes
                .iter()
                .all(|&a| a < seen.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::dim("permute", x.shape(), axes));
        }
        let rg = self.requires_grad();
        Ok(self.graph.push(
            permute_tensor(&x, axes),
            Op::Permute {
                x: self.id,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Dot product of two equal-shape tensors, as a `[1]` tensor.
    pub fn dot(self, other: Var<'g>) -> Result<Var<'g>> {
        Ok(self.mul(other)?.sum())
    }
}

/// Cosine similarity of two vectors, differentiable in both.
///
/// Fails with a degenerate-vector error when either norm is at most `1e-12`.
pub fn cosine_similarity<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 1 || sa != sb {
        return Err(Error::dim("cosine_similarity", &sa, &sb));
    }
    if a.value().norm() <= 1e-12 || b.value().norm() <= 1e-12 {
        return Err(Error::DegenerateVector("cosine_similarity"));
    }
    let dot = a.dot(b)?;
    let na = a.dot(a)?.sqrt();
    let nb = b.dot(b)?.sqrt();
    dot.mul(na.mul(nb)?.recip())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn permute_matches_index_formula() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = permute_tensor(&x, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        for i in 0..4 {
            for j in 0..2 {
                for k in 0..3 {
                    assert_eq!(p.data()[(i * 2 + j) * 3 + k], x.data()[(j * 3 + k) * 4 + i]);
                }
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        match a.matmul(b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn transposed_matmul_variants_agree() {
        let g = Graph::new();
        let a = g.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.constant(t(&[2, 3], &[7., 8., 9., 10., 11., 12.]));
        let c = a.matmul_nt(b).unwrap();
        let bt = b.permute(&[1, 0]).unwrap();
        let d = a.matmul(bt).unwrap();
        assert_eq!(c.value().data(), d.value().data());
        assert_eq!(c.value().data(), &[50., 68., 122., 167.]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let g = Graph::new();
        let x = g.param(Arc::new(Tensor::ones(&[3])));
        let y = x.scale(2.0);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
        // A failed attempt does not consume the graph.
        assert!(g.backward(y.sum()).is_ok());
    }

    #[test]
    fn backward_is_single_use() {
        let g = Graph::new();
        let x = g.param(Arc::new(Tensor::ones(&[3])));
        let s = x.sum();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn untouched_param_gets_zero_gradient() {
        let g = Graph::new();
        let x = g.param(Arc::new(Tensor::ones(&[2])));
        let unused = g.param(Arc::new(Tensor::ones(&[4])));
        let grads = g.backward(x.sum()).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &Tensor::zeros(&[4]));
    }

    #[test]
    fn shared_input_accumulates() {
        let g = Graph::new();
        let x = g.param(Arc::new(t(&[2], &[1.5, -2.0])));
        let y = x.mul(x).unwrap().add(x).unwrap().sum();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, -3.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let g = Graph::new();
        let a = g.constant(t(&[2, 1], &[1., 2.]));
        let b = g.constant(t(&[2, 2], &[3., 4., 5., 6.]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1., 3., 4., 2., 5., 6.]);
        let s = c.slice(1, 1, 2).unwrap();
        assert_eq!(s.value().data(), b.value().data());
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[3]));
        let b = g.constant(Tensor::ones(&[3]));
        assert!(matches!(
            cosine_similarity(a, b),
            Err(Error::DegenerateVector(_))
        ));
    }
}
