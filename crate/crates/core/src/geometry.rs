//! Closed-form quantities attached to a single ReLU layer `x -> relu(Ax + b)`.
//!
//! Besides the layer map itself this module carries the angular distortion
//! factor `phi`, the Gaussian expectation of the squared output distance, the
//! predicted post-activation angle, and the piecewise-quadratic ramps used as
//! smooth surrogates for indicator functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{input, BilipError, Result};
use crate::numerics::{dot, Matrix};

/// Pairs closer than this (relative to the larger norm) are treated as
/// coincident by `phi` and `psi`.
pub const NEAR_DEGENERATE_REL: f64 = 1e-13;

/// Weight matrix plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMap {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl LayerMap {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(BilipError::Dimension {
                expected: a.rows(),
                got: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(input("bias has a non-finite entry"));
        }
        Ok(Self { a, b })
    }

    /// Layer with zero bias.
    pub fn unbiased(a: Matrix) -> Self {
        let b = vec![0.0; a.rows()];
        Self { a, b }
    }

    pub fn input_dim(&self) -> usize {
        self.a.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn has_bias(&self) -> bool {
        self.b.iter().any(|&v| v != 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            a: self.a.scaled(c),
            b: self.b.iter().map(|v| v * c).collect(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.a.cols() {
            return Err(BilipError::Dimension {
                expected: self.a.cols(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `||relu(Ax+b) - relu(Ay+b)||^2`, without the `1/m` normalisation and
    /// without allocating.
    pub(crate) fn sq_output_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.a
            .row_iter()
            .zip(&self.b)
            .map(|(row, &bi)| {
                let (mut ux, mut uy, mut uxy) = (bi, bi, 0.0);
                for ((&w, &xi), &yi) in row.iter().zip(x).zip(y) {
                    ux += w * xi;
                    uy += w * yi;
                    uxy += w * (xi - yi);
                }
                // Both active: use <a, x - y> directly, free of bias cancellation.
                let d = if ux > 0.0 && uy > 0.0 {
                    uxy
                } else {
                    ux.max(0.0) - uy.max(0.0)
                };
                d * d
            })
            .sum()
    }

    /// [`Self::sq_output_distance`] for a batch of pairs. Pairs are packed in
    /// lanes so the inner loop runs across pairs and vectorises; each lane
    /// accumulates in the same order as the single-pair routine, so the
    /// results agree bit for bit.
    pub(crate) fn sq_output_distances(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
        const LANES: usize = 16;
        let n = self.a.cols();
        let mut out = Vec::with_capacity(pairs.len());
        let (mut xt, mut yt, mut dt) = (vec![0.0; n * LANES], vec![0.0; n * LANES], vec![0.0; n * LANES]);
        for block in pairs.chunks(LANES) {
            for (j, (x, y)) in block.iter().enumerate() {
                for t in 0..n {
                    xt[t * LANES + j] = x[t];
                    yt[t * LANES + j] = y[t];
                    dt[t * LANES + j] = x[t] - y[t];
                }
            }
            let mut acc = [0.0; LANES];
            for (row, &bi) in self.a.row_iter().zip(&self.b) {
                let (mut ux, mut uy, mut uxy) = ([bi; LANES], [bi; LANES], [0.0; LANES]);
                for (t, &w) in row.iter().enumerate() {
                    let (xs, ys, ds) = (&xt[t * LANES..], &yt[t * LANES..], &dt[t * LANES..]);
                    for j in 0..LANES {
                        ux[j] += w * xs[j];
                        uy[j] += w * ys[j];
                        uxy[j] += w * ds[j];
                    }
                }
                for j in 0..LANES {
                    let alt = ux[j].max(0.0) - uy[j].max(0.0);
                    let d = if ux[j] > 0.0 && uy[j] > 0.0 { uxy[j] } else { alt };
                    acc[j] += d * d;
                }
            }
            out.extend_from_slice(&acc[..block.len()]);
        }
        out
    }

    /// `||relu(Ax+b)||^2`.
    pub(crate) fn sq_output_norm(&self, x: &[f64]) -> f64 {
        self.a
            .row_iter()
            .zip(&self.b)
            .map(|(row, &bi)| {
                let u = (dot(row, x) + bi).max(0.0);
                u * u
            })
            .sum()
    }

    /// Normalised distortion ratio without argument checks; `x != y` is the
    /// caller's responsibility.
    pub(crate) fn ratio_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let num = self.sq_output_distance(x, y);
        let den: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (num / (self.a.rows() as f64 * den)).sqrt()
    }
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&t| t.max(0.0)).collect()
}

/// `relu(Ax + b)`, without the `1/sqrt(m)` factor.
pub fn layer_apply(layer: &LayerMap, x: &[f64]) -> Result<Vec<f64>> {
    layer.check_dim(x)?;
    Ok(layer
        .a
        .row_iter()
        .zip(&layer.b)
        .map(|(row, &bi)| (dot(row, x) + bi).max(0.0))
        .collect())
}

/// `(1/sqrt(m)) ||relu(Ax+b) - relu(Ay+b)|| / ||x - y||`.
pub fn pairwise_ratio(layer: &LayerMap, x: &[f64], y: &[f64]) -> Result<f64> {
    layer.check_dim(x)?;
    layer.check_dim(y)?;
    if x == y {
        return Err(BilipError::DegeneratePair);
    }
    Ok(layer.ratio_unchecked(x, y))
}

/// Angle between two nonzero vectors, in `[0, pi]`.
///
/// Evaluated as `2 atan2(|x^ - y^|, |x^ + y^|)` on the normalised vectors,
/// which agrees with `acos(<x,y>/(|x||y|))` but keeps full accuracy for
/// nearly parallel and nearly antipodal pairs.
pub fn angle_theta(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(BilipError::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(BilipError::UndefinedAngle);
    }
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (u, v) = (a / nx, b / ny);
        minus += (u - v) * (u - v);
        plus += (u + v) * (u + v);
    }
    Ok(2.0 * minus.sqrt().atan2(plus.sqrt()))
}

/// `sin t - t cos t`, with a series branch where the direct form cancels.
fn sin_minus_t_cos(t: f64) -> f64 {
    if t < 1e-2 {
        let t2 = t * t;
        t * t2 * (1.0 / 3.0 - t2 * (1.0 / 30.0 - t2 / 840.0))
    } else {
        t.sin() - t * t.cos()
    }
}

/// `psi(x, y) = phi(x, y) ||x - y||^2`, evaluated without the removable
/// singularity at `x = y`.
fn psi_raw(x: &[f64], y: &[f64]) -> f64 {
    let nx2 = dot(x, x);
    let ny2 = dot(y, y);
    if nx2 == 0.0 || ny2 == 0.0 {
        return 0.0;
    }
    let theta = angle_theta(x, y).expect("nonzero vectors");
    sin_minus_t_cos(theta) / PI * (nx2 * ny2).sqrt()
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(BilipError::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let scale = dot(x, x).sqrt().max(dot(y, y).sqrt());
    if d2 == 0.0 || d2.sqrt() < NEAR_DEGENERATE_REL * scale {
        return Err(BilipError::DegeneratePair);
    }
    Ok(d2)
}

/// Angular distortion factor
/// `(sin t - t cos t)/pi * |x||y| / |x - y|^2`, with `t` the angle between
/// `x` and `y`; zero when either vector is zero. Always in `[0, 1/4]`.
pub fn phi(x: &[f64], y: &[f64]) -> Result<f64> {
    let d2 = check_pair(x, y)?;
    Ok(psi_raw(x, y) / d2)
}

pub fn psi(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(psi_raw(x, y))
}

/// `E[(relu(<a,x>) - relu(<a,y>))^2]` for a standard Gaussian row `a`,
/// i.e. `|x - y|^2 / 2 - psi(x, y)`.
pub fn expected_sq_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(BilipError::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x == y {
        return Ok(0.0);
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((0.5 * d2 - psi_raw(x, y)).max(0.0))
}

/// Predicted cosine of the angle between `relu(Ax)` and `relu(Ay)` for a
/// wide Gaussian layer, given the input angle.
pub fn predicted_cos_angle(theta: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&theta) {
        return Err(input(format!("angle {theta} outside [0, pi]")));
    }
    Ok(theta.cos() + sin_minus_t_cos(theta) / PI)
}

/// Which smoothed indicator a ramp stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    /// Smoothed `1{t >= beta}`, rising on `[0.9 beta, beta)`.
    TailBeta,
    /// Smoothed `1{t >= -alpha}`, rising on `[-1.1 alpha, -alpha)`.
    RelaxedAlpha,
    /// Smoothed `1{t >= 1.1 alpha}`, rising on `[alpha, 1.1 alpha)`.
    StrictAlpha,
}

pub fn smoothing_ramp(t: f64, kind: RampKind, param: f64) -> Result<f64> {
    if !(param > 0.0) || !param.is_finite() {
        return Err(input(format!("ramp parameter must be positive, got {param}")));
    }
    let (start, end) = match kind {
        RampKind::TailBeta => (0.9 * param, param),
        RampKind::RelaxedAlpha => (-1.1 * param, -param),
        RampKind::StrictAlpha => (param, 1.1 * param),
    };
    let width = 0.1 * param;
    Ok(if t >= end {
        1.0
    } else if t >= start {
        ((t - start) / width).powi(2).min(1.0)
    } else {
        0.0
    })
}

/// Square root of a ramp; Lipschitz with constant `10 / param`.
pub fn ramp_sqrt(t: f64, kind: RampKind, param: f64) -> Result<f64> {
    smoothing_ramp(t, kind, param).map(f64::sqrt)
}
