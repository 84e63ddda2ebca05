//! Mixed cross-entropy training workbench.
//!
//! A small encoder-decoder Transformer built on a hand-written reverse-mode
//! autodiff tape, together with the loss family used to compare plain
//! cross-entropy against mixed cross-entropy under teacher forcing and
//! two-pass scheduled sampling, plus decoding and evaluation tooling (BLEU,
//! multi-reference AVG/TOP, Pairwise-BLEU, cumulative sequence probability,
//! synonym mass).
//!
//! Data-parallel inner loops (matrix products, per-sentence decoding, metric
//! statistics, independent training runs) go through [`par`], which uses
//! rayon when the `parallel` feature is enabled and plain iterators otherwise.

pub mod data;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod kernels;
pub mod losses;
pub mod par;
pub mod sampling;
pub mod schedules;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
