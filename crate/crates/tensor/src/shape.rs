//! Shape arithmetic: trailing-axis broadcasting and strided traversal.

use crate::error::{Result, TensorError};

/// Broadcast two shapes with trailing-axis alignment; size-1 axes expand.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() });
            }
        };
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Strides that read `input` as if it were broadcast to `out`.
/// Broadcast axes get stride 0.
pub(crate) fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(input);
    let lead = out.len() - input.len();
    (0..out.len())
        .map(|i| {
            if i < lead || input[i - lead] == 1 {
                0
            } else {
                own[i - lead]
            }
        })
        .collect()
}

/// Walks the elements of `shape` in row-major order and yields the matching
/// offset into a buffer laid out with `strides`.
pub(crate) struct StridedIter {
    shape: Vec<usize>,
    strides: Vec<usize>,
    counter: Vec<usize>,
    offset: usize,
    remaining: usize,
}

impl StridedIter {
    pub fn new(shape: &[usize], strides: Vec<usize>) -> Self {
        debug_assert_eq!(shape.len(), strides.len());
        StridedIter {
            shape: shape.to_vec(),
            counter: vec![0; shape.len()],
            strides,
            offset: 0,
            remaining: shape.iter().product(),
        }
    }
}

impl Iterator for StridedIter {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        let current = self.offset;
        self.remaining -= 1;
        for d in (0..self.shape.len()).rev() {
            self.counter[d] += 1;
            self.offset += self.strides[d];
            if self.counter[d] < self.shape[d] {
                break;
            }
            self.offset -= self.strides[d] * self.shape[d];
            self.counter[d] = 0;
        }
        Some(current)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Merges neighbouring axes that are contiguous in both stride sets, so the
/// innermost loop of [`for_each_strided2`] runs as long as possible.
fn coalesce(shape: &[usize], sa: &[usize], sb: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut shp, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..shape.len() {
        if shape[i] == 1 {
            continue;
        }
        if let (Some(&la), Some(&lb)) = (a.last(), b.last()) {
            if la == sa[i] * shape[i] && lb == sb[i] * shape[i] {
                *shp.last_mut().unwrap() *= shape[i];
                *a.last_mut().unwrap() = sa[i];
                *b.last_mut().unwrap() = sb[i];
                continue;
            }
        }
        shp.push(shape[i]);
        a.push(sa[i]);
        b.push(sb[i]);
    }
    (shp, a, b)
}

/// Calls `f(out, offset_a, offset_b)` for every element of `shape` in
/// row-major order, `out` being the contiguous output index.
#[inline]
pub(crate) fn for_each_strided2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let (shape, sa, sb) = coalesce(shape, sa, sb);
    let Some((&inner, outer)) = shape.split_last() else {
        f(0, 0, 0);
        return;
    };
    let (ia, ib) = (sa[sa.len() - 1], sb[sb.len() - 1]);
    let mut counter = vec![0usize; outer.len()];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut out = 0;
    loop {
        for j in 0..inner {
            f(out + j, oa + j * ia, ob + j * ib);
        }
        out += inner;
        let mut d = outer.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            counter[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if counter[d] < outer[d] {
                break;
            }
            oa -= sa[d] * outer[d];
            ob -= sb[d] * outer[d];
            counter[d] = 0;
        }
    }
}

#[inline]
pub(crate) fn for_each_strided(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    for_each_strided2(shape, strides, strides, |o, a, _| f(o, a));
}

/// Splits a shape around `axis` into `(outer, len, inner)` element counts.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
