//! Nonlinear state-space identification with subspace encoders, initialized
//! from the best linear approximation (BLA) of the system.
//!
//! * [`data`]: CSV datasets, normalization, splits, white-noise excitation
//!   and the Wiener-Hammerstein simulation system.
//! * [`linear_id`]: subspace identification of the BLA and the linear
//!   reconstructability map.
//! * [`nnet`]: tanh networks, reverse-mode gradients and Adam.
//! * [`subnet`]: the encoder + state-space model, its multiple-shooting loss,
//!   initialization schemes and training loop.
//! * [`eval`]: simulation NRMS and nonlinearity level.
//! * [`cli`]: pipeline commands and the experiment grid.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod linear_id;
pub mod matrix;
pub mod nnet;
pub mod subnet;

pub use error::{Error, Result};
