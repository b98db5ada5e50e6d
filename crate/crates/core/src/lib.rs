//! Numerical core of the multilateral attention-enhanced GRU forecaster.
//!
//! Everything in this crate is pure computation over dense `f64` arrays and
//! builds without `std`; only `alloc` is required. File formats, dates and the
//! command line live in the companion `mag` crate.
//!
//! Layout:
//!
//! - [`tensor`]: [`Matrix`], [`SequenceBatch`] and the dense kernels.
//! - [`tape`]: the gradient tape ([`GradTape`]) recording kernel calls and
//!   replaying their analytic backward passes.
//! - [`gradcheck`]: central finite-difference gradient checker.
//! - [`layers`]: dense, dropout, positional encoding, attention and GRU.
//! - [`model`]: the assembled forecaster, its configuration and parameters.
//! - [`train`]: Adam, the training loop, metrics and grid search.

#![no_std]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{MagError, Result};
pub use gradcheck::grad_check;
pub use model::{ForecastOutput, ModelConfig, ParameterSet};
pub use tape::{GradTape, Gradients, Var};
pub use tensor::{Matrix, SequenceBatch};
