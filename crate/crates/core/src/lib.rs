//! Keyword spotting with a binary analog front-end and binary neural networks.
//!
//! The crate covers the whole inference-side pipeline:
//!
//! - [`afe`]: behavioral simulation of the band-pass / envelope / comparator front-end.
//! - [`capture`]: interrupt timestamping on a 32 kHz tick and rasterization into a
//!   [`capture::BinarySpectrogram`].
//! - [`melspec`]: full-precision log-Mel and envelope features, threshold initialization
//!   and binarization.
//! - [`bnn`]: bit-packed XNOR/popcount inference.
//! - [`model`]: the six-layer architecture family and its binary file format.
//! - [`energy`]: acquisition/processing energy accounting and Pareto extraction.
//! - [`dataset`] and [`eval`]: Speech Commands indexing and batch evaluation.

pub mod afe;
pub mod bnn;
pub mod capture;
pub mod dataset;
pub mod energy;
pub mod error;
pub mod eval;
pub mod melspec;
pub mod model;

pub use error::{Error, Result};
