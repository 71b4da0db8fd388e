//! Calendar embeddings and their fusion with the spatial embedding.

use stdn_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, InModule, Result};
use crate::params::{Bound, ParamId};

const MODULE: &str = "temporal_embedding";

#[derive(Debug, Clone, Copy)]
pub struct TemporalEmbeddingParams {
    /// `(steps_per_day + 7) × D`; rows `0..steps_per_day` are time-of-day
    /// lanes, the last 7 are day-of-week lanes.
    pub w_in: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    pub steps_per_day: usize,
}

fn check_indices(tod: &[usize], dow: &[usize], steps_per_day: usize) -> Result<()> {
    if tod.len() != dow.len() {
        return Err(Error::Size(format!("{} time-of-day indices but {} day-of-week", tod.len(), dow.len())));
    }
    if let Some(&t) = tod.iter().find(|&&t| t >= steps_per_day) {
        return Err(Error::Index { what: "time-of-day", index: t, len: steps_per_day });
    }
    if let Some(&d) = dow.iter().find(|&&d| d >= 7) {
        return Err(Error::Index { what: "day-of-week", index: d, len: 7 });
    }
    Ok(())
}

/// The `L × (steps_per_day + 7)` one-hot calendar matrix.
pub fn calendar_one_hot<S: Scalar>(tod: &[usize], dow: &[usize], steps_per_day: usize) -> Result<Tensor<S>> {
    check_indices(tod, dow, steps_per_day)?;
    if tod.is_empty() {
        return Err(Error::Size("empty calendar sequence".into()));
    }
    let width = steps_per_day + 7;
    let mut t = Tensor::zeros([tod.len(), width]);
    for (row, (&d, &w)) in tod.iter().zip(dow).enumerate() {
        t.data_mut()[row * width + d] = S::one();
        t.data_mut()[row * width + steps_per_day + w] = S::one();
    }
    Ok(t)
}

/// `relu(onehot(tod) ‖ onehot(dow)) · W_in)`, computed by gathering the two
/// active rows of `W_in`. Returns `L × D`.
pub fn initial_temporal_embedding<S: Scalar>(
    tape: &mut Tape<S>,
    p: &TemporalEmbeddingParams,
    bound: &Bound,
    tod: &[usize],
    dow: &[usize],
) -> Result<Var> {
    check_indices(tod, dow, p.steps_per_day)?;
    if tod.is_empty() {
        return Err(Error::Size("empty calendar sequence".into()));
    }
    let dow_rows: Vec<usize> = dow.iter().map(|d| p.steps_per_day + d).collect();
    let a = tape.index_select(bound[p.w_in], tod).in_module(MODULE)?;
    let b = tape.index_select(bound[p.w_in], &dow_rows).in_module(MODULE)?;
    let z = tape.add(a, b).in_module(MODULE)?;
    tape.relu(z).in_module(MODULE)
}

/// `sigmoid(relu(Z·W1)·W2)` over the last axis.
pub fn refine_temporal_embedding<S: Scalar>(
    tape: &mut Tape<S>,
    p: &TemporalEmbeddingParams,
    bound: &Bound,
    z: Var,
) -> Result<Var> {
    let h = tape.matmul(z, bound[p.w1]).in_module(MODULE)?;
    let h = tape.relu(h).in_module(MODULE)?;
    let h = tape.matmul(h, bound[p.w2]).in_module(MODULE)?;
    tape.sigmoid(h).in_module(MODULE)
}

/// Full calendar path: `refine(initial(tod, dow))`, `L × D`.
pub fn temporal_embedding<S: Scalar>(
    tape: &mut Tape<S>,
    p: &TemporalEmbeddingParams,
    bound: &Bound,
    tod: &[usize],
    dow: &[usize],
) -> Result<Var> {
    let z = initial_temporal_embedding(tape, p, bound, tod, dow)?;
    refine_temporal_embedding(tape, p, bound, z)
}

/// `sin(Mt) + relu(Ms)`, or `α·sin(Mt) + (1 − α)·relu(Ms)` when `alpha` is
/// given. `Mt: [.., T, D]` is broadcast over nodes and `Ms: [N, D]` over
/// time, giving `[.., T, N, D]`.
pub fn fuse<S: Scalar>(tape: &mut Tape<S>, mt: Var, ms: Var, alpha: Option<Var>) -> Result<Var> {
    let m = "fuse";
    let ts = tape.shape(mt).to_vec();
    let ss = tape.shape(ms).to_vec();
    if ts.len() < 2 || ss.len() != 2 || ts[ts.len() - 1] != ss[1] {
        return Err(Error::Size(format!("fuse: temporal {ts:?} and spatial {ss:?} widths differ")));
    }
    let mut expanded = ts.clone();
    expanded.insert(ts.len() - 1, 1);
    let mt = tape.reshape(mt, &expanded).in_module(m)?;
    let sin = tape.sin(mt).in_module(m)?;
    let relu = tape.relu(ms).in_module(m)?;
    match alpha {
        None => tape.add(sin, relu).in_module(m),
        Some(a) => {
            let one = tape.constant(Tensor::scalar(S::one()));
            let rest = tape.sub(one, a).in_module(m)?;
            let left = tape.mul(sin, a).in_module(m)?;
            let right = tape.mul(relu, rest).in_module(m)?;
            tape.add(left, right).in_module(m)
        }
    }
}
