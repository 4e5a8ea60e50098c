//! Diffeomorphic image registration in a low-dimensional bandlimited Fourier
//! space.
//!
//! Velocity fields live as small blocks of centered Fourier coefficients;
//! geodesic shooting, energy minimization, and a learned predictor (a pair of
//! real-valued convolutional networks covering the real and imaginary
//! coefficient planes) all operate directly on those blocks. Spatial-domain
//! bridges exist only at the boundary: warping images, Jacobian maps, and
//! the brute-force oracles used by the test suites.
//!
//! Batch-level work (label generation, batch gradients) is data-parallel via
//! rayon under the default `parallel` feature and falls back to sequential
//! iteration without it; both paths produce bit-identical results.

pub mod data;
pub mod dualnet;
pub mod error;
pub mod freq;
pub mod io;
pub mod metrics;
pub mod parallel;
pub mod registration;
pub mod shooting;
pub mod spatial;

pub use error::{Error, Result};
