//! Dense-tensor reverse-mode automatic differentiation.
//!
//! Values are row-major `f64` tensors. A [`Tape`] records operations on
//! [`NodeId`] handles; [`Tape::backward`] returns [`Gradients`] for every
//! node and for each [`ParamSet`] entry that was placed on the tape with
//! [`Tape::param`]. [`OptimizerState`] applies SGD or Adam updates and
//! [`grad_check`] compares gradients against central differences.
//!
//! Broadcasting is limited to one-element operands of `add`, `sub` and
//! `mul`; every other shape mismatch is an error.
//!
//! ```
//! use drec_autodiff::{ParamSet, Tape, Tensor};
//!
//! let mut params = ParamSet::new();
//! let x = params.add("x", Tensor::scalar(3.0));
//! let mut tape = Tape::new();
//! let xn = tape.param(&params, x);
//! let y = tape.mul(xn, xn).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.param(x).unwrap().item(), Some(6.0));
//! ```

mod error;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamError, STEP};
pub use optim::{sgd_step, OptimizerKind, OptimizerState};
pub use params::{ParamId, ParamSet};
pub use tape::{Attrs, Gradients, NodeId, OpKind, Reduce, Tape};
pub use tensor::Tensor;
