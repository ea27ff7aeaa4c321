//! Semi-blind cascaded channel estimation for RIS-aided massive MIMO.
//!
//! The received frame follows `Y = G (S ⊙ (F X)) + H X + W`, where `G` is the
//! RIS-to-BS channel, `F` the user-to-RIS channel, `H` the direct user-to-BS
//! channel, `S` the on/off reflection pattern and `X` the user symbols with a
//! known pilot block. This crate provides
//!
//! - [`model`]: instance generation, the forward model and scoring,
//! - [`amp`]: the trilinear AMP estimator and a two-stage BiG-AMP + LMMSE baseline,
//! - [`replica`]: the large-system MSE/SER predictor,
//! - [`harness`]: Monte Carlo sweeps, configuration files and CSV output.

pub mod amp;
pub mod error;
pub mod harness;
pub mod model;
pub mod replica;
pub mod rng;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMat = ndarray::Array2<C64>;
/// Dense real matrix.
pub type RMat = ndarray::Array2<f64>;
