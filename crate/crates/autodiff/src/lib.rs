//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Build a [`Tape`], register parameters and inputs, apply operators, then
//! call [`Tape::backward`] on a single-element output. Image operators accept
//! `[C,H,W]` or batched `[N,C,H,W]` layouts.
//!
//! ```
//! use ds2c2_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
//! let sq = tape.square(x).unwrap();
//! let m = tape.mean(sq).unwrap();
//! let y = tape.mul_scalar(m, 0.5).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[0.5, 1.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
mod tape;
mod tensor;

pub use error::{AdError, Result};
pub use gradcheck::{analytic_gradients, compare_gradients, grad_check};
pub use ops::elementwise::LEAKY_SLOPE;
pub use ops::gdn::BETA_MIN;
pub use ops::shuffle::{pixel_shuffle, pixel_unshuffle};
pub use optim::Adam;
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};
