//! Multi-codebook vector quantisation (MVQ) and multi-codebook masked token
//! prediction.
//!
//! The crate is split into:
//!
//! * [`numerics`]: dense matrices, softmax / cross-entropy, Adam, a seeded RNG
//!   and a central finite-difference gradient checker.
//! * [`quantiser`]: an MVQ quantiser with `N` parallel codebooks of `K` code
//!   vectors, linear classifiers for the initial encoding, coordinate-descent
//!   refinement and direct-sum decoding, plus its training loop.
//! * [`ssl`]: frame masking, a small convolutional student encoder, per-codebook
//!   prediction heads, single- and dual-domain masked prediction losses and a
//!   pretraining loop.
//! * [`io`]: little-endian binary formats, a synthetic HMM feature generator and
//!   the `key = value` configuration format.
//!
//! All math is generic over [`Real`] (`f32` or `f64`). The aliases at the crate
//! root fix the scalar to `f64`, which is what the training loops and the CLI use.

pub mod error;
pub mod io;
pub mod numerics;
pub mod quantiser;
pub mod sequence;
pub mod ssl;

pub use error::{Error, Result};
pub use numerics::Real;

/// `f64` dense matrix.
pub type Matrix = numerics::Matrix<f64>;
/// `f32` dense matrix.
pub type MatrixF32 = numerics::Matrix<f32>;
/// `f64` Adam state.
pub type AdamState = numerics::AdamState<f64>;
/// `f64` quantiser.
pub type Quantiser = quantiser::Quantiser<f64>;
/// `f32` quantiser.
pub type QuantiserF32 = quantiser::Quantiser<f32>;
/// `f64` feature sequence.
pub type FeatureSequence = sequence::FeatureSequence<f64>;
/// `f32` feature sequence.
pub type FeatureSequenceF32 = sequence::FeatureSequence<f32>;
/// `f64` student model.
pub type StudentModel = ssl::StudentModel<f64>;

pub use sequence::{Domain, TokenSequence, TokenTuple};
