//! Small dense matrices, seeded random streams and singular-value extraction.
//!
//! Everything here is sized for desk-scale problems: the exact paths touch
//! matrices of a few dozen rows, while the Monte-Carlo paths stream through
//! tall Gaussian matrices one row at a time.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, BilipError, Result};

/// Dense real matrix with row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(input(format!("matrix must be at least 1x1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(BilipError::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(input(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(m * n);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n {
                return Err(input(format!("row {i} has {} entries, expected {n}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(m, n, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Submatrix made of the given rows, in the given order. `None` when
    /// `indices` is empty.
    pub fn select_rows(&self, indices: &[usize]) -> Option<Self> {
        if indices.is_empty() {
            return None;
        }
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Some(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(BilipError::Dimension {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Seed plus substream id. Identical values always reproduce identical
/// sample sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSeed {
    pub const fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub const fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Child stream `index` of this stream. Children of distinct parents or
    /// distinct indices map to distinct stream ids (up to 64-bit hashing).
    pub fn substream(&self, index: u64) -> Self {
        let mixed = splitmix64(splitmix64(self.stream_id ^ 0x6a09_e667_f3bc_c909) ^ index);
        Self {
            seed: self.seed,
            stream_id: mixed,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const ROWS_PER_STREAM: usize = 256;

/// Matrix with i.i.d. standard normal entries. Rows are generated in blocks,
/// each block from its own substream, so the result does not depend on how
/// many worker threads fill it.
pub fn gaussian_matrix(m: usize, n: usize, seed: RngSeed) -> Result<Matrix> {
    if m == 0 || n == 0 {
        return Err(input(format!("gaussian matrix must be at least 1x1, got {m}x{n}")));
    }
    let mut data = vec![0.0; m * n];
    data.par_chunks_mut(ROWS_PER_STREAM * n)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = seed.substream(block as u64).rng();
            for v in chunk.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        });
    Ok(Matrix { rows: m, cols: n, data })
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform draw from the unit sphere in `n` dimensions, using a caller-held
/// generator.
pub fn unit_sphere_with<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let g = gaussian_vector(rng, n);
        let r = norm(&g);
        if r > 0.0 {
            return g.into_iter().map(|v| v / r).collect();
        }
    }
}

pub fn sample_unit_sphere(n: usize, seed: RngSeed) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(input("sphere dimension must be positive"));
    }
    Ok(unit_sphere_with(&mut seed.rng(), n))
}

/// Largest singular value and the `n`-th largest singular value of `a`
/// viewed as a map from `R^n`. The latter is zero whenever `a` has fewer
/// than `n` rows or is rank deficient.
pub fn singular_extremes(a: &Matrix) -> (f64, f64) {
    let sv = a.to_dmatrix().singular_values();
    let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if a.rows() < a.cols() || s_max == 0.0 {
        return (s_max, 0.0);
    }
    let s_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    // Numerical rank cut-off, same rule as LAPACK-style rank estimates.
    let tol = a.rows().max(a.cols()) as f64 * f64::EPSILON * s_max;
    (s_max, if s_min <= tol { 0.0 } else { s_min })
}
