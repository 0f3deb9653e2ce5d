//! Desk-scale audio-visual speech recognition with attentive fusion.
//!
//! Everything numeric lives here: a dense `f64` tensor with reverse-mode
//! automatic differentiation, multi-head attention with padding/causal
//! masks, the three audio-visual fusion blocks (concat / align / cross),
//! the nine encoder-decoder variants ({early, middle, late} fusion stage
//! x fusion block), log-mel feature extraction, synthetic noise and
//! corpus generators with exact-SNR mixing, a multi-condition training
//! loop, beam-search decoding and the WER evaluation grid.
//!
//! The crate is `no_std` + `alloc`: it performs no IO and keeps all float
//! math on `libm` so results are bit-identical across platforms. File
//! formats, configuration and the command-line surface live in the
//! companion `avasr-cli` crate.

#![cfg_attr(not(test), no_std)]
// Index loops over row-major buffers are the house style here; iterator
// rewrites obscure the stride arithmetic the oracles are checking.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod attention;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod features;
mod fft;
pub mod fusion;
pub mod gradcheck;
pub mod math;
pub mod model;
pub mod noise;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod wer;

pub use error::{CoreError, Result};
pub use tensor::{Tape, Tensor, TensorId};
