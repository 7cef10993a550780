//! Dense image matching with a hierarchical correlation pyramid, plus a
//! match-guided variational optical flow solver and evaluation tools.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod correspondence;
pub mod descriptor;
pub mod error;
pub mod evalio;
pub mod flow;
pub mod image;
pub mod invariance;
pub mod par;
pub mod pyramid;
pub mod synth;

pub use error::{Error, Result};
