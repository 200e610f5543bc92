//! Optimized fingerprinting of spin-1/2 ensembles.
//!
//! The crate simulates ensembles of isochromats driven by trains of δ-pulses,
//! builds dictionaries of their transverse-magnetization fingerprints,
//! optimizes the pulse areas so the fingerprints of different relaxation
//! parameters are maximally distinct, and estimates parameters from noisy
//! measurements by dictionary matching followed by curve-fit refinement.

pub mod bloch;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod fingerprint;
pub mod grape;
pub mod io;
pub mod model;
pub mod noise;

pub use error::{Error, Result};
