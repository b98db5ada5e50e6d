//! Layers of the forecaster.
//!
//! Each layer comes in two forms: an owning struct holding its weights (for
//! standalone use and tests) and a `*Vars` struct of tape handles through
//! which the actual computation is recorded. The model binds `*Vars` directly
//! to the leaves of its parameter set, so both forms share one code path.

pub mod attention;
pub mod dense;
pub mod dropout;
pub mod gru;
pub mod positional;

pub use attention::{scaled_dot_product_attention, AttentionHead, MhaVars, MultiHeadAttention, ResidualNorm};
pub use dense::{Activation, DenseLayer, DenseVars};
pub use dropout::{dropout, dropout_mask};
pub use gru::{GruCell, GruOutput, GruVars};
pub use positional::{positional_encoding, PositionalEncoding};
