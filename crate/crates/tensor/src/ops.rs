use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatView, Scalar};
use crate::shape::{broadcast_shapes, broadcast_strides, contiguous_strides, for_each_strided, for_each_strided2, split_at_axis};
use crate::tape::{batch_offsets, BinaryKind, Op, Tape, UnaryKind, Var};
use crate::tensor::{numel, Tensor};

/// Elementwise operation kinds accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    /// Hadamard product.
    Mul,
    /// `max(0, x)`; the derivative at exactly 0 is 0.
    Relu,
    Sigmoid,
    Tanh,
    Sin,
    Abs,
    Neg,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

impl<S: Scalar> Tape<S> {
    /// Batched matrix product `[..., m, k] · [..., k, n] -> [..., m, n]`.
    ///
    /// Leading batch axes broadcast with trailing alignment (a missing or
    /// size-1 batch axis repeats the operand).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let av = &self.nodes[ai].value;
        let bv = &self.nodes[bi].value;
        let (ashape, bshape) = (av.shape(), bv.shape());
        let shape_err = || TensorError::Shape { op: "matmul", lhs: ashape.to_vec(), rhs: bshape.to_vec() };
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(shape_err());
        }
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (k2, n) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        if k != k2 {
            return Err(shape_err());
        }
        let a_batch = &ashape[..ashape.len() - 2];
        let b_batch = &bshape[..bshape.len() - 2];
        let out_batch = broadcast_shapes("matmul", a_batch, b_batch).map_err(|_| shape_err())?;
        let mut out_shape = out_batch.clone();
        out_shape.extend([m, n]);

        let mut out = vec![S::zero(); numel(&out_shape)];
        if b_batch.is_empty() {
            let rows = av.numel() / k;
            gemm(
                MatView::row_major(av.data(), 0, rows, k),
                MatView::row_major(bv.data(), 0, k, n),
                S::zero(),
                &mut out,
                0,
            );
        } else {
            let (a_offs, b_offs) = batch_offsets(a_batch, b_batch, &out_batch);
            for (i, (&ao, &bo)) in a_offs.iter().zip(&b_offs).enumerate() {
                gemm(
                    MatView::row_major(av.data(), ao * m * k, m, k),
                    MatView::row_major(bv.data(), bo * k * n, k, n),
                    S::zero(),
                    &mut out,
                    i * m * n,
                );
            }
        }
        let rg = self.needs_grad(ai) || self.needs_grad(bi);
        Ok(self.push(Op::MatMul { a: ai, b: bi }, Tensor::raw(out_shape, out), rg))
    }

    /// Applies an elementwise kind. Binary kinds require `b` and broadcast;
    /// unary kinds reject it.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let invalid = |reason: &str| TensorError::Invalid { op: "elementwise", reason: reason.to_string() };
        let binary = |k| match k {
            Elementwise::Add => BinaryKind::Add,
            Elementwise::Sub => BinaryKind::Sub,
            _ => BinaryKind::Mul,
        };
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(binary(kind), a, b),
            (true, None) => Err(invalid("binary kind needs a second operand")),
            (false, Some(_)) => Err(invalid("unary kind takes a single operand")),
            (false, None) => {
                let u = match kind {
                    Elementwise::Relu => UnaryKind::Relu,
                    Elementwise::Sigmoid => UnaryKind::Sigmoid,
                    Elementwise::Tanh => UnaryKind::Tanh,
                    Elementwise::Sin => UnaryKind::Sin,
                    Elementwise::Abs => UnaryKind::Abs,
                    Elementwise::Neg => UnaryKind::Neg,
                    _ => unreachable!(),
                };
                self.unary(u, a)
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sin, x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, factor: S) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let data = xv.data().iter().map(|&v| v * factor).collect();
        let t = Tensor::raw(xv.shape().to_vec(), data);
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::Scale { x: xi, factor }, t, rg))
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let av = &self.nodes[ai].value;
        let bv = &self.nodes[bi].value;
        let f = |x: S, y: S| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let (shape, data) = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            (av.shape().to_vec(), data)
        } else {
            let op = match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
            };
            let shape = broadcast_shapes(op, av.shape(), bv.shape())?;
            let (ad, bd) = (av.data(), bv.data());
            let mut data = vec![S::zero(); numel(&shape)];
            let (sa, sb) = (broadcast_strides(av.shape(), &shape), broadcast_strides(bv.shape(), &shape));
            for_each_strided2(&shape, &sa, &sb, |o, oa, ob| data[o] = f(ad[oa], bd[ob]));
            (shape, data)
        };
        let rg = self.needs_grad(ai) || self.needs_grad(bi);
        Ok(self.push(Op::Binary { kind, a: ai, b: bi }, Tensor::raw(shape, data), rg))
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let zero = S::zero();
        let one = S::one();
        let data: Vec<S> = match kind {
            UnaryKind::Relu => xv.data().iter().map(|&v| if v > zero { v } else { zero }).collect(),
            UnaryKind::Sigmoid => xv.data().iter().map(|&v| sigmoid(v, one)).collect(),
            UnaryKind::Tanh => xv.data().iter().map(|&v| v.tanh()).collect(),
            UnaryKind::Sin => xv.data().iter().map(|&v| v.sin()).collect(),
            UnaryKind::Abs => xv.data().iter().map(|&v| v.abs()).collect(),
            UnaryKind::Neg => xv.data().iter().map(|&v| -v).collect(),
        };
        let t = Tensor::raw(xv.shape().to_vec(), data);
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::Unary { kind, x: xi }, t, rg))
    }

    /// Softmax over the last axis, computed with max subtraction.
    /// NaN inputs propagate to NaN outputs.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let n = *xv.shape().last().ok_or(TensorError::Axis { op: "softmax_rows", axis: 0, rank: 0 })?;
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().fold(S::neg_infinity(), |m, &v| if v > m { v } else { m });
            let max = if max.is_finite() { max } else { S::zero() };
            let mut total = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let t = Tensor::raw(xv.shape().to_vec(), data);
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::Softmax { x: xi }, t, rg))
    }

    /// Reduces along `axis`, removing it. A rank-1 input reduces to shape `[1]`.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axis: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let rank = xv.rank();
        if axis >= rank {
            return Err(TensorError::Axis { op: "reduce", axis, rank });
        }
        let (outer, len, inner) = split_at_axis(xv.shape(), axis);
        let mut data = vec![S::zero(); outer * inner];
        let src = xv.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut shape: Vec<usize> = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.needs_grad(xi);
        let summed = self.push(Op::SumAxis { x: xi, axis }, Tensor::raw(shape, data), rg);
        match kind {
            Reduce::Sum => Ok(summed),
            Reduce::Mean => self.scale(summed, S::one() / S::lit(len as f64)),
        }
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(Reduce::Sum, x, axis)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let total: S = self.nodes[xi].value.data().iter().copied().sum();
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::SumAll { x: xi }, Tensor::raw(vec![1], vec![total]), rg))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum(x)?;
        self.scale(s, S::one() / S::lit(n as f64))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| TensorError::Invalid { op: "concat", reason: "no inputs".into() })?;
        let idx: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::Axis { op: "concat", axis, rank: base.len() });
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let agrees = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !agrees {
                return Err(TensorError::Shape { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &i in &idx {
                let v = &self.nodes[i].value;
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = idx.iter().any(|&i| self.needs_grad(i));
        Ok(self.push(Op::Concat { inputs: idx, axis }, Tensor::raw(shape, data), rg))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let rank = xv.rank();
        if axis >= rank {
            return Err(TensorError::Axis { op: "slice", axis, rank });
        }
        let (outer, total, inner) = split_at_axis(xv.shape(), axis);
        if len == 0 || start + len > total {
            return Err(TensorError::Index { op: "slice", index: start + len, len: total });
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            data.extend_from_slice(&xv.data()[s..s + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::Slice { x: xi, axis, start }, Tensor::raw(shape, data), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let rank = xv.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Invalid { op: "permute", reason: format!("{perm:?} is not a permutation of rank {rank}") });
        }
        let in_strides = contiguous_strides(xv.shape());
        let shape: Vec<usize> = perm.iter().map(|&p| xv.shape()[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let src = xv.data();
        let mut data = vec![S::zero(); src.len()];
        for_each_strided(&shape, &strides, |o, i| data[o] = src[i]);
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::Permute { x: xi, perm: perm.to_vec() }, Tensor::raw(shape, data), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.value(x).rank();
        if rank < 2 {
            return Err(TensorError::Axis { op: "transpose", axis: 1, rank });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        if shape.contains(&0) || numel(shape) != xv.numel() {
            return Err(TensorError::Shape { op: "reshape", lhs: xv.shape().to_vec(), rhs: shape.to_vec() });
        }
        let t = Tensor::raw(shape.to_vec(), xv.data().to_vec());
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::Reshape { x: xi }, t, rg))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let out = broadcast_shapes("broadcast_to", xv.shape(), shape)?;
        if out != shape {
            return Err(TensorError::Shape { op: "broadcast_to", lhs: xv.shape().to_vec(), rhs: shape.to_vec() });
        }
        let src = xv.data();
        let mut data = vec![S::zero(); numel(shape)];
        for_each_strided(shape, &broadcast_strides(xv.shape(), shape), |o, i| data[o] = src[i]);
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::BroadcastTo { x: xi }, Tensor::raw(shape.to_vec(), data), rg))
    }

    /// Gathers entries of axis 0; gradients scatter-add back.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let xv = &self.nodes[xi].value;
        let rows = xv.shape()[0];
        if indices.is_empty() {
            return Err(TensorError::Invalid { op: "index_select", reason: "empty index list".into() });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index { op: "index_select", index: bad, len: rows });
        }
        let row = xv.numel() / rows;
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&xv.data()[i * row..(i + 1) * row]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = indices.len();
        let rg = self.needs_grad(xi);
        Ok(self.push(Op::IndexSelect { x: xi, indices: indices.to_vec() }, Tensor::raw(shape, data), rg))
    }
}

#[inline]
fn sigmoid<S: Scalar>(v: S, one: S) -> S {
    if v >= S::zero() {
        one / (one + (-v).exp())
    } else {
        let e = v.exp();
        e / (one + e)
    }
}
