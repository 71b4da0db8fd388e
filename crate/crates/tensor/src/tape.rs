//! Gradient tape.
//!
//! Every operation appends one node holding its output value and a record of
//! its inputs. Records are in creation order, which is a topological order, so
//! backward is a single reverse sweep. A tape is consumed by `backward`; a
//! second call fails with [`TensorError::TapeConsumed`].

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatView, Scalar};
use crate::shape::{broadcast_strides, contiguous_strides, for_each_strided, for_each_strided2, split_at_axis, StridedIter};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Sin,
    Abs,
    Neg,
}

#[derive(Debug, Clone)]
pub(crate) enum Op<S> {
    Leaf,
    MatMul { a: usize, b: usize },
    Binary { kind: BinaryKind, a: usize, b: usize },
    Unary { kind: UnaryKind, x: usize },
    Scale { x: usize, factor: S },
    Softmax { x: usize },
    SumAxis { x: usize, axis: usize },
    SumAll { x: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Permute { x: usize, perm: Vec<usize> },
    Reshape { x: usize },
    BroadcastTo { x: usize },
    IndexSelect { x: usize, indices: Vec<usize> },
}

#[derive(Debug, Clone)]
pub(crate) struct Node<S> {
    pub value: Tensor<S>,
    pub op: Op<S>,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Confined to one thread for the duration of a forward/backward pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    pub(crate) nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Registers a leaf; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        let rg = tensor.requires_grad();
        self.push(Op::Leaf, tensor, rg)
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, tensor: Tensor<S>) -> Var {
        self.push(Op::Leaf, tensor, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.push(Op::Leaf, tensor, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of a leaf after `backward`; `None` if unreachable or not
    /// requiring a gradient.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    pub(crate) fn check(&self, v: Var) -> Result<usize> {
        if v.0 < self.nodes.len() {
            Ok(v.0)
        } else {
            Err(TensorError::ForeignHandle(v.0))
        }
    }

    pub(crate) fn needs_grad(&self, idx: usize) -> bool {
        self.nodes[idx].value.requires_grad()
    }

    pub(crate) fn push(&mut self, op: Op<S>, tensor: Tensor<S>, requires_grad: bool) -> Var {
        let var = Var(self.nodes.len());
        let value = tensor.with_requires_grad(requires_grad).attach(var);
        self.nodes.push(Node { value, op });
        var
    }

    /// Reverse sweep from a scalar root. Gradients accumulate additively over
    /// fan-out and land on every reachable leaf that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let root = self.check(root)?;
        let root_value = &self.nodes[root].value;
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<S>>> = vec![None; root + 1];
        grads[root] = Some(vec![S::one()]);

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.needs_grad(idx) {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.set_grad(g);
                continue;
            }
            self.propagate(idx, g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g_owned: Vec<S>, grads: &mut [Option<Vec<S>>]) {
        let g = g_owned.as_slice();
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => self.matmul_backward(*a, *b, out.shape(), g, grads),
            Op::Binary { kind, a, b } => self.binary_backward(*kind, *a, *b, out.shape(), g, grads),
            Op::Unary { kind, x } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let xin = self.nodes[*x].value.data();
                let y = out.data();
                let zero = S::zero();
                let one = S::one();
                match kind {
                    UnaryKind::Relu => accumulate(grads, *x, g.len(), |i| if xin[i] > zero { g[i] } else { zero }),
                    UnaryKind::Sigmoid => accumulate(grads, *x, g.len(), |i| g[i] * y[i] * (one - y[i])),
                    UnaryKind::Tanh => accumulate(grads, *x, g.len(), |i| g[i] * (one - y[i] * y[i])),
                    UnaryKind::Sin => accumulate(grads, *x, g.len(), |i| g[i] * xin[i].cos()),
                    UnaryKind::Abs => accumulate(grads, *x, g.len(), |i| {
                        if xin[i] > zero {
                            g[i]
                        } else if xin[i] < zero {
                            -g[i]
                        } else {
                            zero
                        }
                    }),
                    UnaryKind::Neg => accumulate(grads, *x, g.len(), |i| -g[i]),
                }
            }
            Op::Scale { x, factor } => {
                if self.needs_grad(*x) {
                    accumulate(grads, *x, g.len(), |i| g[i] * *factor);
                }
            }
            Op::Softmax { x } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let s = out.data();
                let n = *out.shape().last().expect("softmax rank");
                let buf = grad_buf(grads, *x, s.len());
                for row in 0..s.len() / n {
                    let r = row * n..(row + 1) * n;
                    let dot: S = s[r.clone()].iter().zip(&g[r.clone()]).map(|(&a, &b)| a * b).sum();
                    for i in r {
                        buf[i] += s[i] * (g[i] - dot);
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let xshape = self.nodes[*x].value.shape();
                let (outer, len, inner) = split_at_axis(xshape, *axis);
                let buf = grad_buf(grads, *x, outer * len * inner);
                for o in 0..outer {
                    for l in 0..len {
                        let dst = (o * len + l) * inner;
                        let src = o * inner;
                        for i in 0..inner {
                            buf[dst + i] += g[src + i];
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.needs_grad(*x) {
                    let n = self.nodes[*x].value.numel();
                    let buf = grad_buf(grads, *x, n);
                    for b in buf.iter_mut() {
                        *b += g[0];
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_at_axis(out.shape(), *axis);
                let mut start = 0;
                for &inp in inputs {
                    let len = self.nodes[inp].value.shape()[*axis];
                    if self.needs_grad(inp) {
                        let buf = grad_buf(grads, inp, outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + start) * inner;
                            let dst = o * len * inner;
                            for i in 0..len * inner {
                                buf[dst + i] += g[src + i];
                            }
                        }
                    }
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let xshape = self.nodes[*x].value.shape();
                let (outer, total, inner) = split_at_axis(xshape, *axis);
                let len = out.shape()[*axis];
                let buf = grad_buf(grads, *x, outer * total * inner);
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        buf[dst + i] += g[src + i];
                    }
                }
            }
            Op::Permute { x, perm } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let xshape = self.nodes[*x].value.shape();
                let in_strides = contiguous_strides(xshape);
                let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let buf = grad_buf(grads, *x, g.len());
                for_each_strided(out.shape(), &strides, |o, i| buf[i] += g[o]);
            }
            Op::Reshape { x } => {
                if self.needs_grad(*x) {
                    match &mut grads[*x] {
                        Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &gi)| *b += gi),
                        slot @ None => *slot = Some(g_owned),
                    }
                }
            }
            Op::BroadcastTo { x } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let xshape = self.nodes[*x].value.shape();
                let strides = broadcast_strides(xshape, out.shape());
                let buf = grad_buf(grads, *x, self.nodes[*x].value.numel());
                for_each_strided(out.shape(), &strides, |o, i| buf[i] += g[o]);
            }
            Op::IndexSelect { x, indices } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let xv = &self.nodes[*x].value;
                let row = xv.numel() / xv.shape()[0];
                let buf = grad_buf(grads, *x, xv.numel());
                for (k, &r) in indices.iter().enumerate() {
                    for i in 0..row {
                        buf[r * row + i] += g[k * row + i];
                    }
                }
            }
        }
    }

    fn matmul_backward(&self, a: usize, b: usize, out_shape: &[usize], g: &[S], grads: &mut [Option<Vec<S>>]) {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let (ashape, bshape) = (av.shape(), bv.shape());
        let m = ashape[ashape.len() - 2];
        let k = ashape[ashape.len() - 1];
        let n = bshape[bshape.len() - 1];

        if bshape.len() == 2 {
            let rows = av.numel() / k;
            if self.needs_grad(a) {
                let buf = grad_buf(grads, a, av.numel());
                let dc = MatView::row_major(g, 0, rows, n);
                let bt = MatView::row_major(bv.data(), 0, k, n).t();
                gemm(dc, bt, S::one(), buf, 0);
            }
            if self.needs_grad(b) {
                let buf = grad_buf(grads, b, bv.numel());
                let at = MatView::row_major(av.data(), 0, rows, k).t();
                let dc = MatView::row_major(g, 0, rows, n);
                gemm(at, dc, S::one(), buf, 0);
            }
            return;
        }

        let out_batch = &out_shape[..out_shape.len() - 2];
        let (a_offs, b_offs) = batch_offsets(&ashape[..ashape.len() - 2], &bshape[..bshape.len() - 2], out_batch);
        if self.needs_grad(a) {
            let buf = grad_buf(grads, a, av.numel());
            for (bi, (&ao, &bo)) in a_offs.iter().zip(&b_offs).enumerate() {
                let dc = MatView::row_major(g, bi * m * n, m, n);
                let bt = MatView::row_major(bv.data(), bo * k * n, k, n).t();
                gemm(dc, bt, S::one(), buf, ao * m * k);
            }
        }
        if self.needs_grad(b) {
            let buf = grad_buf(grads, b, bv.numel());
            for (bi, (&ao, &bo)) in a_offs.iter().zip(&b_offs).enumerate() {
                let at = MatView::row_major(av.data(), ao * m * k, m, k).t();
                let dc = MatView::row_major(g, bi * m * n, m, n);
                gemm(at, dc, S::one(), buf, bo * k * n);
            }
        }
    }

    fn binary_backward(
        &self,
        kind: BinaryKind,
        a: usize,
        b: usize,
        out_shape: &[usize],
        g: &[S],
        grads: &mut [Option<Vec<S>>],
    ) {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let same = av.shape() == out_shape && bv.shape() == out_shape;
        let (a_need, b_need) = (self.needs_grad(a), self.needs_grad(b));

        if same {
            let (ad, bd) = (av.data(), bv.data());
            if a_need {
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => accumulate(grads, a, g.len(), |i| g[i]),
                    BinaryKind::Mul => accumulate(grads, a, g.len(), |i| g[i] * bd[i]),
                }
            }
            if b_need {
                match kind {
                    BinaryKind::Add => accumulate(grads, b, g.len(), |i| g[i]),
                    BinaryKind::Sub => accumulate(grads, b, g.len(), |i| -g[i]),
                    BinaryKind::Mul => accumulate(grads, b, g.len(), |i| g[i] * ad[i]),
                }
            }
            return;
        }

        let a_strides = broadcast_strides(av.shape(), out_shape);
        let b_strides = broadcast_strides(bv.shape(), out_shape);
        let (ad, bd) = (av.data(), bv.data());
        if a_need {
            let buf = grad_buf(grads, a, av.numel());
            match kind {
                BinaryKind::Add | BinaryKind::Sub => for_each_strided(out_shape, &a_strides, |o, i| buf[i] += g[o]),
                BinaryKind::Mul => {
                    for_each_strided2(out_shape, &a_strides, &b_strides, |o, i, j| buf[i] += g[o] * bd[j]);
                }
            }
        }
        if b_need {
            let buf = grad_buf(grads, b, bv.numel());
            match kind {
                BinaryKind::Add => for_each_strided(out_shape, &b_strides, |o, j| buf[j] += g[o]),
                BinaryKind::Sub => for_each_strided(out_shape, &b_strides, |o, j| buf[j] -= g[o]),
                BinaryKind::Mul => {
                    for_each_strided2(out_shape, &b_strides, &a_strides, |o, j, i| buf[j] += g[o] * ad[i]);
                }
            }
        }
    }
}

/// Adds `f(i)` into the gradient of node `idx`, creating it on first use.
#[inline]
fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], idx: usize, len: usize, f: impl Fn(usize) -> S) {
    match &mut grads[idx] {
        Some(buf) => {
            for (i, b) in buf.iter_mut().enumerate() {
                *b += f(i);
            }
        }
        slot @ None => *slot = Some((0..len).map(f).collect()),
    }
}

fn grad_buf<S: Scalar>(grads: &mut [Option<Vec<S>>], idx: usize, len: usize) -> &mut Vec<S> {
    grads[idx].get_or_insert_with(|| vec![S::zero(); len])
}

/// Matrix offsets (in units of whole matrices) of each output batch entry
/// into the two broadcast operands.
pub(crate) fn batch_offsets(a_batch: &[usize], b_batch: &[usize], out_batch: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let a = StridedIter::new(out_batch, broadcast_strides(a_batch, out_batch)).collect();
    let b = StridedIter::new(out_batch, broadcast_strides(b_batch, out_batch)).collect();
    (a, b)
}
