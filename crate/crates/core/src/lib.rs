//! Root-cause diagnosis of process alarm sequences with a single discrete
//! hidden Markov model.
//!
//! Faults are the hidden states and alarm activations are the observation
//! symbols. The crate covers the whole pipeline: alarm extraction from
//! measurement traces ([`extraction`]), HMM training and decoding ([`hmm`]),
//! the diagnoser and its prefix-length evaluation ([`diagnoser`]), a
//! clustering baseline ([`baseline`]) and a synthetic fault-propagation
//! generator ([`sim`]).
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod diagnoser;
pub mod error;
pub mod extraction;
pub mod hmm;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Hmm64 = hmm::Hmm<f64>;
pub type Hmm32 = hmm::Hmm<f32>;
pub type StatePath64 = hmm::StatePath<f64>;
pub type Diagnoser64 = diagnoser::DiagnoserModel<f64>;
pub type Diagnoser32 = diagnoser::DiagnoserModel<f32>;
pub type Diagnosis64 = diagnoser::Diagnosis<f64>;
