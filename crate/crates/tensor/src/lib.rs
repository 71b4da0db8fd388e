//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! sweeps it once in reverse from a scalar root. The op set is deliberately
//! small: batched matmul, broadcasting elementwise arithmetic and
//! activations, row softmax, reductions, and the shape plumbing needed to
//! move between them.
//!
//! ```
//! use stdn_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod scalar;
pub mod shape;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{Elementwise, Reduce};
pub use scalar::{Precision, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
