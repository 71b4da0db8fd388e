//! Learned time-varying adjacency and diffusion-style graph convolution.

use stdn_tensor::{Scalar, Tape, Var};

use crate::error::{Error, InModule, Result};
use crate::params::{Bound, ParamId};

const MODULE: &str = "dynamic_graph";

#[derive(Debug, Clone)]
pub struct DynamicGraphParams {
    /// `N_t × D_g` time-slot embedding.
    pub e_t: ParamId,
    /// `N × D_g` starting-node embedding (columns of the adjacency).
    pub e_s: ParamId,
    /// `N × D_g` ending-node embedding (rows of the adjacency).
    pub e_e: ParamId,
    /// `D_g × D_g × D_g` core tensor indexed `[o, q, r]`.
    pub k: ParamId,
    /// `C × D`
    pub w_in: ParamId,
    /// One `D × D` map per hop, `0..=L_gc`.
    pub w_hops: Vec<ParamId>,
    pub slots: usize,
    pub embed_dim: usize,
}

/// Raw contraction `A'[s, i, j] = Σ_{o,q,r} K[o,q,r]·Et[slot_s,o]·Ee[i,q]·Es[j,r]`
/// for each requested slot, `[S, N, N]`, computed one factor at a time.
pub fn adjacency_logits<S: Scalar>(
    tape: &mut Tape<S>,
    p: &DynamicGraphParams,
    bound: &Bound,
    slots: &[usize],
) -> Result<Var> {
    if let Some(&s) = slots.iter().find(|&&s| s >= p.slots) {
        return Err(Error::Index { what: "time slot", index: s, len: p.slots });
    }
    let g = p.embed_dim;
    let et = tape.index_select(bound[p.e_t], slots).in_module(MODULE)?;
    let k = tape.reshape(bound[p.k], &[g, g * g]).in_module(MODULE)?;
    let m1 = tape.matmul(et, k).in_module(MODULE)?;
    let m1 = tape.reshape(m1, &[slots.len(), g, g]).in_module(MODULE)?;
    let b = tape.matmul(bound[p.e_e], m1).in_module(MODULE)?;
    let es_t = tape.transpose(bound[p.e_s]).in_module(MODULE)?;
    tape.matmul(b, es_t).in_module(MODULE)
}

/// Row-stochastic adjacency for each requested slot, `[S, N, N]`: ReLU of
/// [`adjacency_logits`], then a softmax over `j`.
pub fn dynamic_adjacency<S: Scalar>(
    tape: &mut Tape<S>,
    p: &DynamicGraphParams,
    bound: &Bound,
    slots: &[usize],
) -> Result<Var> {
    let a = adjacency_logits(tape, p, bound, slots)?;
    let a = tape.relu(a).in_module(MODULE)?;
    tape.softmax_rows(a).in_module(MODULE)
}

/// Graph convolution with the learned adjacency of each step's slot.
/// `x: [.., N, C]` with one slot per leading position; returns `[.., N, D]`.
pub fn dynamic_graph_conv<S: Scalar>(
    tape: &mut Tape<S>,
    p: &DynamicGraphParams,
    bound: &Bound,
    x: Var,
    slots: &[usize],
) -> Result<Var> {
    let mut distinct = slots.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let lookup: Vec<usize> = slots.iter().map(|s| distinct.binary_search(s).unwrap()).collect();
    let per_slot = dynamic_adjacency(tape, p, bound, &distinct)?;
    let adjacency = tape.index_select(per_slot, &lookup).in_module(MODULE)?;
    graph_conv_with(tape, p, bound, x, adjacency)
}

/// Same as [`dynamic_graph_conv`] with caller-supplied adjacencies `[L, N, N]`.
pub fn graph_conv_with<S: Scalar>(
    tape: &mut Tape<S>,
    p: &DynamicGraphParams,
    bound: &Bound,
    x: Var,
    adjacency: Var,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let a_shape = tape.shape(adjacency).to_vec();
    if xs.len() < 2 {
        return Err(Error::Size(format!("graph conv input must be [.., N, C], got {xs:?}")));
    }
    let (n, c) = (xs[xs.len() - 2], xs[xs.len() - 1]);
    let steps: usize = xs[..xs.len() - 2].iter().product();
    if a_shape != [steps, n, n] {
        return Err(Error::Size(format!("adjacency {a_shape:?} does not match input {xs:?}")));
    }
    let flat = tape.reshape(x, &[steps, n, c]).in_module(MODULE)?;
    let mut h = tape.matmul(flat, bound[p.w_in]).in_module(MODULE)?;
    let mut out = tape.matmul(h, bound[p.w_hops[0]]).in_module(MODULE)?;
    for w in &p.w_hops[1..] {
        h = tape.matmul(adjacency, h).in_module(MODULE)?;
        let term = tape.matmul(h, bound[*w]).in_module(MODULE)?;
        out = tape.add(out, term).in_module(MODULE)?;
    }
    let d = *tape.shape(out).last().unwrap();
    let mut shape = xs[..xs.len() - 1].to_vec();
    shape.push(d);
    tape.reshape(out, &shape).in_module(MODULE)
}
