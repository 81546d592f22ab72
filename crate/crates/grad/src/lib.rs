//! Minimal dense-tensor numerics for the trajectory toolkit.
//!
//! Everything trainable in the workspace is expressed as a composition of the
//! primitives recorded by [`Tape`]: affine maps, matrix products, elementwise
//! arithmetic and nonlinearities, reductions, reshapes, concatenation, index
//! gathers and stop-gradient. Training runs in `f64` so that central-difference
//! checks ([`grad_check`]) can be held to tight tolerances.
//!
//! ```
//! use trajloom_grad::{grad, Tensor};
//!
//! let (value, grads) = grad(
//!     |tape, x| {
//!         let sq = tape.mul(x[0], x[0])?;
//!         tape.sum(sq)
//!     },
//!     &[Tensor::scalar(3.0)],
//! )
//! .unwrap();
//! assert_eq!(value, 9.0);
//! assert_eq!(grads[0].item(), 6.0);
//! ```

mod check;
mod error;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use check::{grad, grad_check, grad_check_report, GradCheckReport};
pub use error::GradError;
pub use optim::{optim_step, AdamW, OptimState};
pub use params::{BoundParams, ParamSet};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var, ZERO_INDEX};
pub use tensor::{shape_len, Tensor};
