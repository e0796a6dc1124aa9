//! Bi-Lipschitz analysis of single ReLU layers `x -> relu(Ax + b) / sqrt(m)`.
//!
//! * [`numerics`]: matrices, seeded random streams, singular values.
//! * [`geometry`]: the layer map, distortion ratios, `phi`, ramps.
//! * [`exact`]: cell enumeration, `lambda(A)`, exact upper constant, grid oracle.
//! * [`estimators`]: sampled brackets and the `sqrt(2)` certificate.
//! * [`lab`]: seeded Gaussian experiments.

// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod exact;
pub mod geometry;
pub mod lab;
pub mod numerics;

pub use error::{BilipError, Result};
pub use estimators::{BiLipBracket, Sqrt2Certificate};
pub use geometry::LayerMap;
pub use numerics::{Matrix, RngSeed};
