use std::str::FromStr;

use stdn_tensor::{Scalar, Tape, Tensor, Var};

use crate::error::{Error, InModule, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecompositionMode {
    /// `trend = H ⊙ M`, `seasonal = H − trend`.
    #[default]
    Masked,
    /// Ablation: `trend = H`, `seasonal = 0`.
    Passthrough,
}

impl FromStr for DecompositionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(DecompositionMode::Masked),
            "passthrough" | "none" => Ok(DecompositionMode::Passthrough),
            other => Err(Error::Param(format!("unknown decomposition `{other}` (masked, passthrough)"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecomposedStates {
    pub trend: Var,
    pub seasonal: Var,
}

pub fn decompose<S: Scalar>(tape: &mut Tape<S>, h: Var, m: Var) -> Result<DecomposedStates> {
    if tape.shape(h) != tape.shape(m) {
        return Err(Error::Size(format!(
            "decompose: hidden {:?} and embedding {:?} differ",
            tape.shape(h),
            tape.shape(m)
        )));
    }
    let trend = tape.mul(h, m).in_module("decomposition")?;
    let seasonal = tape.sub(h, trend).in_module("decomposition")?;
    Ok(DecomposedStates { trend, seasonal })
}

pub fn decompose_with<S: Scalar>(tape: &mut Tape<S>, mode: DecompositionMode, h: Var, m: Var) -> Result<DecomposedStates> {
    match mode {
        DecompositionMode::Masked => decompose(tape, h, m),
        DecompositionMode::Passthrough => {
            let seasonal = tape.constant(Tensor::zeros(tape.shape(h).to_vec()));
            Ok(DecomposedStates { trend: h, seasonal })
        }
    }
}
