//! GRU stream encoders, multi-head attention and the bottleneck decoder.

use stdn_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, InModule, Result};
use crate::params::{Bound, ParamId};

const MODULE: &str = "encoder_decoder";

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
}

/// Runs a GRU along the time axis of `x: [.., T, N, D]`, independently for
/// every node and leading index, from a zero state. Returns all hidden states.
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// n  = tanh(x·W_n + (r ⊙ h)·U_n + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_encode<S: Scalar>(tape: &mut Tape<S>, p: &GruParams, bound: &Bound, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() < 3 {
        return Err(Error::Size(format!("gru input must be [.., T, N, D], got {shape:?}")));
    }
    let axis = shape.len() - 3;
    let steps = shape[axis];
    let width = shape[shape.len() - 1];
    let rows: usize = shape.iter().product::<usize>() / (steps * width);
    let mut step_shape = shape.clone();
    step_shape[axis] = 1;

    // Input projections for every step at once.
    let mut project = |w: ParamId, b: ParamId| -> Result<Var> {
        let xw = tape.matmul(x, bound[w]).in_module(MODULE)?;
        tape.add(xw, bound[b]).in_module(MODULE)
    };
    let xz = project(p.w_z, p.b_z)?;
    let xr = project(p.w_r, p.b_r)?;
    let xn = project(p.w_n, p.b_n)?;

    let mut h = tape.constant(Tensor::zeros([rows, width]));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let at = |tape: &mut Tape<S>, v: Var| -> Result<Var> {
            let s = tape.slice(v, axis, t, 1).in_module(MODULE)?;
            tape.reshape(s, &[rows, width]).in_module(MODULE)
        };
        let (xz_t, xr_t, xn_t) = (at(tape, xz)?, at(tape, xr)?, at(tape, xn)?);
        let hz = tape.matmul(h, bound[p.u_z]).in_module(MODULE)?;
        let z = tape.add(xz_t, hz).in_module(MODULE)?;
        let z = tape.sigmoid(z).in_module(MODULE)?;
        let hr = tape.matmul(h, bound[p.u_r]).in_module(MODULE)?;
        let r = tape.add(xr_t, hr).in_module(MODULE)?;
        let r = tape.sigmoid(r).in_module(MODULE)?;
        let rh = tape.mul(r, h).in_module(MODULE)?;
        let hn = tape.matmul(rh, bound[p.u_n]).in_module(MODULE)?;
        let n = tape.add(xn_t, hn).in_module(MODULE)?;
        let n = tape.tanh(n).in_module(MODULE)?;
        // (1 − z) ⊙ n + z ⊙ h = n + z ⊙ (h − n)
        let diff = tape.sub(h, n).in_module(MODULE)?;
        let gated = tape.mul(z, diff).in_module(MODULE)?;
        h = tape.add(n, gated).in_module(MODULE)?;
        outputs.push(tape.reshape(h, &step_shape).in_module(MODULE)?);
    }
    tape.concat(&outputs, axis).in_module(MODULE)
}

/// `Yt + Ys`, or `β·Yt + (1 − β)·Ys` when `beta` is given.
pub fn combine_streams<S: Scalar>(tape: &mut Tape<S>, yt: Var, ys: Var, beta: Option<Var>) -> Result<Var> {
    if tape.shape(yt) != tape.shape(ys) {
        return Err(Error::Size(format!("combine: {:?} and {:?} differ", tape.shape(yt), tape.shape(ys))));
    }
    match beta {
        None => tape.add(yt, ys).in_module(MODULE),
        Some(b) => {
            let one = tape.constant(Tensor::scalar(S::one()));
            let rest = tape.sub(one, b).in_module(MODULE)?;
            let left = tape.mul(yt, b).in_module(MODULE)?;
            let right = tape.mul(ys, rest).in_module(MODULE)?;
            tape.add(left, right).in_module(MODULE)
        }
    }
}

/// Multi-head attention weights. The per-head maps are stored side by side:
/// head `j` owns columns `j·d_head..(j+1)·d_head` of `w_q`, `w_k`, `w_v`
/// and the matching rows of `w_o`.
#[derive(Debug, Clone, Copy)]
pub struct MhsaParams {
    /// `W × (h·d_head)`
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// `(h·d_head) × W`
    pub w_o: ParamId,
    pub heads: usize,
    pub head_dim: usize,
}

/// Splits `[.., L, h·d]` into `[.., h, L, d]`.
fn split_heads<S: Scalar>(tape: &mut Tape<S>, x: Var, heads: usize, head_dim: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let r = shape.len();
    let mut split = shape[..r - 1].to_vec();
    split.extend([heads, head_dim]);
    let x = tape.reshape(x, &split).in_module(MODULE)?;
    let mut perm: Vec<usize> = (0..=r).collect();
    perm.swap(r - 2, r - 1);
    tape.permute(x, &perm).in_module(MODULE)
}

/// Attention output `[.., Lq, W]` and the weights `[.., h, Lq, Lk]`.
/// Leading axes of `q` and `k`/`v` broadcast against each other.
pub fn mhsa_with_weights<S: Scalar>(
    tape: &mut Tape<S>,
    p: &MhsaParams,
    bound: &Bound,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    if tape.shape(k) != tape.shape(v) {
        return Err(Error::Size(format!("attention keys {:?} and values {:?} differ", tape.shape(k), tape.shape(v))));
    }
    for x in [q, k] {
        if tape.shape(x).len() < 2 {
            return Err(Error::Size(format!("attention input must be [.., L, W], got {:?}", tape.shape(x))));
        }
    }
    let (h, d) = (p.heads, p.head_dim);
    let qp = tape.matmul(q, bound[p.w_q]).in_module(MODULE)?;
    let kp = tape.matmul(k, bound[p.w_k]).in_module(MODULE)?;
    let vp = tape.matmul(v, bound[p.w_v]).in_module(MODULE)?;
    let qh = split_heads(tape, qp, h, d)?;
    let kh = split_heads(tape, kp, h, d)?;
    let vh = split_heads(tape, vp, h, d)?;
    let kt = tape.transpose(kh).in_module(MODULE)?;
    let scores = tape.matmul(qh, kt).in_module(MODULE)?;
    let scores = tape.scale(scores, S::lit(1.0 / (d as f64).sqrt())).in_module(MODULE)?;
    let weights = tape.softmax_rows(scores).in_module(MODULE)?;
    let ctx = tape.matmul(weights, vh).in_module(MODULE)?;
    // [.., h, Lq, d] -> [.., Lq, h·d]
    let r = tape.shape(ctx).len();
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 3, r - 2);
    let ctx = tape.permute(ctx, &perm).in_module(MODULE)?;
    let mut merged = tape.shape(ctx)[..r - 2].to_vec();
    merged.push(h * d);
    let ctx = tape.reshape(ctx, &merged).in_module(MODULE)?;
    let out = tape.matmul(ctx, bound[p.w_o]).in_module(MODULE)?;
    Ok((out, weights))
}

pub fn mhsa<S: Scalar>(tape: &mut Tape<S>, p: &MhsaParams, bound: &Bound, q: Var, k: Var, v: Var) -> Result<Var> {
    mhsa_with_weights(tape, p, bound, q, k, v).map(|(out, _)| out)
}

#[derive(Debug, Clone, Copy)]
pub struct BtBlockParams {
    /// `T' × 3D` inducing vectors.
    pub it: ParamId,
    pub stage1: MhsaParams,
    pub stage2: MhsaParams,
    /// `3D × D`
    pub out_proj: ParamId,
}

/// One bottleneck-transformer block.
///
/// `z_prev: [.., L, N, D]`, `mt: [.., L, D]` (the temporal embedding for
/// those `L` positions), `ms: [N, D]`. Per node, the inducing vectors attend
/// over `H = z_prev ‖ mt ‖ ms`, then the sequence attends back over the
/// result. When `L` differs from the output length the second stage queries
/// with the first stage's output instead of `H`. Returns `[.., T', N, D]`.
pub fn bt_block<S: Scalar>(
    tape: &mut Tape<S>,
    p: &BtBlockParams,
    bound: &Bound,
    z_prev: Var,
    mt: Var,
    ms: Var,
) -> Result<Var> {
    let zs = tape.shape(z_prev).to_vec();
    let ts = tape.shape(mt).to_vec();
    let r = zs.len();
    if r < 3 || ts.len() != r - 1 || ts[..r - 2] != zs[..r - 2] || ts[r - 2] != zs[r - 1] {
        return Err(Error::Size(format!("bt_block: hidden {zs:?} and temporal embedding {ts:?} disagree")));
    }
    let len = zs[r - 3];
    let n = zs[r - 2];
    let mut mt_shape = ts.clone();
    mt_shape.insert(r - 2, 1);
    let mt = tape.reshape(mt, &mt_shape).in_module(MODULE)?;
    let mt = tape.broadcast_to(mt, &zs).in_module(MODULE)?;
    let ms = tape.broadcast_to(ms, &zs).in_module(MODULE)?;
    let h = tape.concat(&[z_prev, mt, ms], r - 1).in_module(MODULE)?;

    // Sequences per node: [.., N, L, 3D]
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 3, r - 2);
    let h = tape.permute(h, &perm).in_module(MODULE)?;
    let it = bound[p.it];
    let horizon = tape.shape(it)[0];
    let induced = mhsa(tape, &p.stage1, bound, it, h, h)?;
    let queries = if len == horizon { h } else { induced };
    let z = mhsa(tape, &p.stage2, bound, queries, induced, induced)?;
    let z = tape.matmul(z, bound[p.out_proj]).in_module(MODULE)?;
    let z = tape.permute(z, &perm).in_module(MODULE)?;
    debug_assert_eq!(tape.shape(z)[r - 2], n);
    Ok(z)
}

/// `Z·W_out + b_out` per position.
pub fn output_projection<S: Scalar>(tape: &mut Tape<S>, z: Var, w_out: Var, b_out: Var) -> Result<Var> {
    let y = tape.matmul(z, w_out).in_module(MODULE)?;
    tape.add(y, b_out).in_module(MODULE)
}
