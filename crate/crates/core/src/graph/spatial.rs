use stdn_tensor::{Scalar, Tape, Var};

use crate::error::{InModule, Result};
use crate::params::{Bound, ParamId};

/// Bias-free two-layer map from spectral features to model width.
#[derive(Debug, Clone, Copy)]
pub struct SpatialEmbeddingParams {
    /// `k_r × hidden`
    pub w1: ParamId,
    /// `hidden × D`
    pub w2: ParamId,
}

/// `relu(Z·W1)·W2` for `Z: N × k_r`, giving `N × D`.
pub fn spatial_embedding<S: Scalar>(
    tape: &mut Tape<S>,
    p: &SpatialEmbeddingParams,
    bound: &Bound,
    z: Var,
) -> Result<Var> {
    let m = "spatial_embedding";
    let h = tape.matmul(z, bound[p.w1]).in_module(m)?;
    let h = tape.relu(h).in_module(m)?;
    tape.matmul(h, bound[p.w2]).in_module(m)
}
