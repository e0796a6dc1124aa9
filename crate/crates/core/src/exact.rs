//! Exact analysis of `x -> relu(Ax)` for small layers.
//!
//! The map is continuous and piecewise linear; its pieces are the open cells
//! of the central hyperplane arrangement `{<a_j, x> = 0}`. Enumerating those
//! cells gives the realizable activation patterns, from which `lambda(A)` and
//! the exact upper Lipschitz constant follow directly.
//!
//! Cells are found through the rays of the arrangement: every cell of an
//! essential central arrangement in dimension `d >= 2` has an extreme ray on
//! its boundary, and the cells touching a ray `u` are exactly `u + eps*v` for
//! `v` ranging over the cells of the lower-dimensional arrangement formed by
//! the hyperplanes through `u`. Recursing down to dimension one gives every
//! cell with an interior witness.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{BilipError, Result};
use crate::estimators::{coordinate_search, BiLipBracket, Direction, PairWitness};
use crate::geometry::LayerMap;
use crate::numerics::{dot, norm, singular_extremes, Matrix};

/// Largest input dimension handled by the exact routines.
pub const MAX_EXACT_COLS: usize = 4;
/// Largest row count handled by the exact routines (patterns are `u32` masks).
pub const MAX_EXACT_ROWS: usize = 24;
/// Minimum normalised margin `|<a_j, w>| / |a_j|` a witness must keep.
pub const PATTERN_TOL: f64 = 1e-9;
/// Rows whose unit normals agree (up to sign) within this are merged.
pub const PARALLEL_TOL: f64 = 1e-10;

const INDEPENDENCE_TOL: f64 = 1e-9;
const ON_HYPERPLANE_TOL: f64 = 1e-9;

/// A realizable set of active rows together with an interior point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPattern {
    /// Bit `j` set iff row `j` is strictly positive on the cell.
    pub mask: u32,
    /// Unit vector inside the cell.
    pub witness: Vec<f64>,
}

impl ActivationPattern {
    pub fn rows(&self) -> Vec<usize> {
        (0..32).filter(|j| self.mask & (1 << j) != 0).collect()
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrangementWarning {
    /// Rows `first` and `second` define the same hyperplane (possibly with
    /// opposite orientation).
    ParallelRows { first: usize, second: usize },
    /// The best witness found for `mask` sits closer than `PATTERN_TOL` to a
    /// hyperplane.
    LowMargin { mask: u32, margin: f64 },
}

/// All open cells of the arrangement, sorted by mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEnumeration {
    pub patterns: Vec<ActivationPattern>,
    pub warnings: Vec<ArrangementWarning>,
}

impl CellEnumeration {
    pub fn has_empty_cell(&self) -> bool {
        self.patterns.iter().any(ActivationPattern::is_empty)
    }
}

fn check_limits(a: &Matrix) -> Result<()> {
    if a.cols() > MAX_EXACT_COLS {
        return Err(BilipError::OverLimit {
            what: "input dimension",
            detail: format!("n = {} > {MAX_EXACT_COLS}", a.cols()),
        });
    }
    if a.rows() > MAX_EXACT_ROWS {
        return Err(BilipError::OverLimit {
            what: "row count",
            detail: format!("m = {} > {MAX_EXACT_ROWS}", a.rows()),
        });
    }
    Ok(())
}

/// Orthonormalises `vectors` in order, dropping anything (numerically) in the
/// span of what came before.
fn gram_schmidt<'a>(vectors: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        if basis.len() == dim {
            break;
        }
        let mut r = v.to_vec();
        // Two passes keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&r, q);
                r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
            }
        }
        let len = norm(&r);
        if len > INDEPENDENCE_TOL {
            basis.push(r.into_iter().map(|t| t / len).collect());
        }
    }
    basis
}

fn unit_vectors(dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Orthonormal basis of the complement of `span(basis)` in `R^dim`.
fn complement(basis: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    let units = unit_vectors(dim);
    let all = gram_schmidt(
        basis.iter().map(Vec::as_slice).chain(units.iter().map(Vec::as_slice)),
        dim,
    );
    all[basis.len()..].to_vec()
}

fn sign_key(normals: &[Vec<f64>], w: &[f64]) -> u64 {
    normals
        .iter()
        .enumerate()
        .filter(|(_, h)| dot(h, w) > 0.0)
        .fold(0u64, |acc, (k, _)| acc | (1 << k))
}

/// One interior witness per cell of the essential central arrangement with
/// the given unit normals in `R^dim`.
fn essential_cells(normals: &[Vec<f64>], dim: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }

    // Lines of the arrangement, keyed by the set of hyperplanes containing them.
    let mut lines: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for subset in combinations(normals.len(), dim - 1) {
        let basis = gram_schmidt(subset.iter().map(|&k| normals[k].as_slice()), dim);
        if basis.len() < dim - 1 {
            continue;
        }
        let u = complement(&basis, dim).swap_remove(0);
        let through: Vec<usize> = (0..normals.len())
            .filter(|&k| dot(&normals[k], &u).abs() <= ON_HYPERPLANE_TOL)
            .collect();
        lines.entry(through).or_insert(u);
    }

    let mut cells: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (through, u) in &lines {
        let perp = complement(std::slice::from_ref(u), dim);
        let local: Vec<Vec<f64>> = through
            .iter()
            .map(|&k| {
                let g: Vec<f64> = perp.iter().map(|p| dot(p, &normals[k])).collect();
                let len = norm(&g);
                g.into_iter().map(|t| t / len).collect()
            })
            .collect();
        let local_cells = essential_cells(&local, dim - 1);

        for sign in [1.0, -1.0] {
            let ray: Vec<f64> = u.iter().map(|t| sign * t).collect();
            for lc in &local_cells {
                let mut v = vec![0.0; dim];
                for (coef, p) in lc.iter().zip(&perp) {
                    v.iter_mut().zip(p).for_each(|(vi, pi)| *vi += coef * pi);
                }
                // Step off the ray without crossing any hyperplane it avoids.
                let (mut clearance, mut reach) = (f64::INFINITY, 0.0_f64);
                for (k, h) in normals.iter().enumerate() {
                    if through.binary_search(&k).is_err() {
                        clearance = clearance.min(dot(h, &ray).abs());
                        reach = reach.max(dot(h, &v).abs());
                    }
                }
                let eps = if reach > 0.0 {
                    (0.5 * clearance / reach).min(1.0)
                } else {
                    1.0
                };
                let mut w: Vec<f64> = ray.iter().zip(&v).map(|(r, vi)| r + eps * vi).collect();
                let len = norm(&w);
                w.iter_mut().for_each(|t| *t /= len);
                cells.entry(sign_key(normals, &w)).or_insert(w);
            }
        }
    }
    cells.into_values().collect()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Smallest normalised margin of `w` over the nonzero rows, signed so that a
/// positive value means `w` is strictly inside its cell.
fn min_margin(units: &[Option<Vec<f64>>], w: &[f64], mask: u32) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for (j, u) in units.iter().enumerate() {
        if let Some(u) = u {
            let s = if mask & (1 << j) != 0 { 1.0 } else { -1.0 };
            let m = s * dot(u, w);
            if m < best.0 {
                best = (m, j);
            }
        }
    }
    best
}

/// Pushes a witness away from its nearest hyperplane while the cell stays
/// the same; only ever increases the minimum margin.
fn polish_witness(units: &[Option<Vec<f64>>], w: &mut Vec<f64>, mask: u32) {
    let (mut margin, _) = min_margin(units, w, mask);
    if !margin.is_finite() {
        return;
    }
    let mut step = 0.5;
    for _ in 0..60 {
        let (_, j) = min_margin(units, w, mask);
        let u = units[j].as_ref().expect("nonzero row");
        let s = if mask & (1 << j) != 0 { 1.0 } else { -1.0 };
        let mut cand: Vec<f64> = w.iter().zip(u).map(|(wi, ui)| wi + step * s * ui).collect();
        let len = norm(&cand);
        cand.iter_mut().for_each(|t| *t /= len);
        let (m, _) = min_margin(units, &cand, mask);
        if m > margin {
            *w = cand;
            margin = m;
        } else {
            step *= 0.5;
        }
    }
}

/// Every activation pattern realized on an open cell of the arrangement
/// `{<a_j, x> = 0}`, each with a unit interior witness.
pub fn enumerate_cells(a: &Matrix) -> Result<CellEnumeration> {
    check_limits(a)?;
    let n = a.cols();
    let mut warnings = Vec::new();

    let units: Vec<Option<Vec<f64>>> = a
        .row_iter()
        .map(|r| {
            let len = norm(r);
            (len > 0.0).then(|| r.iter().map(|t| t / len).collect())
        })
        .collect();

    // Distinct hyperplanes with a canonical orientation.
    let mut planes: Vec<Vec<f64>> = Vec::new();
    let mut plane_rep: Vec<usize> = Vec::new();
    for (j, u) in units.iter().enumerate() {
        let Some(u) = u else { continue };
        let lead = u.iter().find(|t| t.abs() > 1e-12).copied().unwrap_or(1.0);
        let canon: Vec<f64> = u.iter().map(|t| t * lead.signum()).collect();
        match planes
            .iter()
            .position(|p| p.iter().zip(&canon).all(|(x, y)| (x - y).abs() <= PARALLEL_TOL))
        {
            Some(k) => warnings.push(ArrangementWarning::ParallelRows {
                first: plane_rep[k],
                second: j,
            }),
            None => {
                planes.push(canon);
                plane_rep.push(j);
            }
        }
    }

    // Restrict to the span of the normals, where the arrangement is essential.
    let span = gram_schmidt(planes.iter().map(Vec::as_slice), n);
    let witnesses: Vec<Vec<f64>> = if span.is_empty() {
        vec![unit_vectors(n).swap_remove(0)]
    } else {
        let reduced: Vec<Vec<f64>> = planes
            .iter()
            .map(|p| {
                let g: Vec<f64> = span.iter().map(|q| dot(q, p)).collect();
                let len = norm(&g);
                g.into_iter().map(|t| t / len).collect()
            })
            .collect();
        essential_cells(&reduced, span.len())
            .into_iter()
            .map(|c| {
                let mut w = vec![0.0; n];
                for (coef, q) in c.iter().zip(&span) {
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi += coef * qi);
                }
                let len = norm(&w);
                w.into_iter().map(|t| t / len).collect()
            })
            .collect()
    };

    let mut patterns: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for mut w in witnesses {
        let mask = a
            .row_iter()
            .enumerate()
            .filter(|(_, r)| dot(r, &w) > 0.0)
            .fold(0u32, |acc, (j, _)| acc | (1 << j));
        if patterns.contains_key(&mask) {
            continue;
        }
        polish_witness(&units, &mut w, mask);
        let (margin, _) = min_margin(&units, &w, mask);
        if margin < PATTERN_TOL {
            warnings.push(ArrangementWarning::LowMargin { mask, margin });
        }
        patterns.insert(mask, w);
    }

    Ok(CellEnumeration {
        patterns: patterns
            .into_iter()
            .map(|(mask, witness)| ActivationPattern { mask, witness })
            .collect(),
        warnings,
    })
}

fn submatrix(a: &Matrix, mask: u32) -> Option<Matrix> {
    let rows: Vec<usize> = (0..a.rows()).filter(|j| mask & (1 << j) != 0).collect();
    a.select_rows(&rows)
}

/// Padded smallest singular value of the active submatrix; zero for fewer
/// than `n` active rows.
pub fn pattern_sigma_min(a: &Matrix, mask: u32) -> f64 {
    submatrix(a, mask).map_or(0.0, |s| singular_extremes(&s).1)
}

pub fn pattern_sigma_max(a: &Matrix, mask: u32) -> f64 {
    submatrix(a, mask).map_or(0.0, |s| singular_extremes(&s).0)
}

fn lambda_from_cells(a: &Matrix, cells: &CellEnumeration) -> f64 {
    cells
        .patterns
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| pattern_sigma_min(a, p.mask))
        .fold(f64::INFINITY, f64::min)
}

/// `lambda(A)`: the minimum over realizable nonempty patterns of the padded
/// smallest singular value of the active submatrix. The empty pattern, if
/// realizable, is skipped (see [`BoundsReport::has_empty_cell`]). Returns
/// `+inf` only when no nonempty pattern exists, i.e. `A = 0`.
pub fn lambda_of_a(a: &Matrix) -> Result<f64> {
    let cells = enumerate_cells(a)?;
    Ok(lambda_from_cells(a, &cells))
}

/// Exact `U_{A,0}` = max over cells of the spectral norm of the active
/// submatrix, divided by `sqrt(m)`.
pub fn exact_upper_lipschitz(a: &Matrix) -> Result<f64> {
    let cells = enumerate_cells(a)?;
    let best = cells
        .patterns
        .iter()
        .map(|p| pattern_sigma_max(a, p.mask))
        .fold(0.0_f64, f64::max);
    Ok(best / (a.rows() as f64).sqrt())
}

/// Bounds from the related literature, evaluated on `A`.
///
/// The lower bound on `L` is quoted in two forms that disagree on the
/// `1/sqrt(m)` normalisation; both are reported as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    /// Largest singular value of `A` (unnormalised).
    pub lambda_max: f64,
    pub lambda_a: f64,
    /// `sqrt(lambda(A) / (2m))`.
    pub l_lower_reading1: f64,
    /// `(sqrt(lambda(A)) / 2, sqrt(lambda(A)))`, no `1/sqrt(m)` factor.
    pub l_bracket_reading2: (f64, f64),
    /// `2 sqrt(lambda_max / lambda(A))`; infinite when `lambda(A) = 0`.
    pub beta_upper: f64,
    /// Some open cell has every row inactive, so `relu(Ax)` vanishes on an
    /// open set and `L_{A,0} = 0`.
    pub has_empty_cell: bool,
    pub warnings: Vec<ArrangementWarning>,
}

pub fn related_bounds(a: &Matrix) -> Result<BoundsReport> {
    let cells = enumerate_cells(a)?;
    let (lambda_max, _) = singular_extremes(a);
    let lambda_a = lambda_from_cells(a, &cells);
    if !lambda_a.is_finite() {
        return Err(BilipError::ZeroMatrix);
    }
    let m = a.rows() as f64;
    let beta_upper = if lambda_a > 0.0 {
        2.0 * (lambda_max / lambda_a).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(BoundsReport {
        lambda_max,
        lambda_a,
        l_lower_reading1: (lambda_a / (2.0 * m)).sqrt(),
        l_bracket_reading2: (0.5 * lambda_a.sqrt(), lambda_a.sqrt()),
        beta_upper,
        has_empty_cell: cells.has_empty_cell(),
        warnings: cells.warnings,
    })
}

/// Grid parameters to an input pair.
type PairMap = Box<dyn Fn(&[f64]) -> (Vec<f64>, Vec<f64>)>;

/// Iterations of the local polish applied to grid extremes.
pub const REFINE_ITERS: usize = 40;

/// Dense-grid oracle for `L_{A,0}` and `U_{A,0}` when `n <= 2`.
///
/// By scale invariance and symmetry it suffices to take `x` on the unit
/// sphere and `y` in the unit ball. The best grid points are then polished
/// by coordinate search. Every reported ratio is attained by an explicit
/// pair, so `u_lo <= U` and `l_hi >= L` hold regardless of resolution.
pub fn brute_force_bilip(a: &Matrix, resolution: usize) -> Result<BiLipBracket> {
    let n = a.cols();
    if n > 2 {
        return Err(BilipError::OverLimit {
            what: "input dimension",
            detail: format!("brute-force oracle needs n <= 2, got {n}"),
        });
    }
    if resolution < 2 {
        return Err(crate::error::input("resolution must be at least 2"));
    }
    let layer = LayerMap::unbiased(a.clone());

    // Parameterisation of (x, y) and the grid over it.
    let (to_pair, grid, steps): (PairMap, Vec<Vec<f64>>, Vec<f64>) =
        if n == 1 {
            let h = 2.0 / (resolution - 1) as f64;
            let mut grid = Vec::with_capacity(2 * resolution);
            for sx in [1.0, -1.0] {
                for j in 0..resolution {
                    grid.push(vec![sx, (-1.0 + j as f64 * h).clamp(-1.0, 1.0)]);
                }
            }
            (
                Box::new(|p: &[f64]| (vec![p[0]], vec![p[1].clamp(-1.0, 1.0)])),
                grid,
                vec![0.0, h],
            )
        } else {
            let radial = (resolution / 10).max(1);
            let dt = std::f64::consts::TAU / resolution as f64;
            let dr = 1.0 / radial as f64;
            let mut grid = Vec::with_capacity(resolution * resolution * (radial + 1));
            for i in 0..resolution {
                for j in 0..resolution {
                    for k in 0..=radial {
                        grid.push(vec![i as f64 * dt, j as f64 * dt, k as f64 * dr]);
                    }
                }
            }
            (
                Box::new(|p: &[f64]| {
                    let r = p[2].clamp(0.0, 1.0);
                    (vec![p[0].cos(), p[0].sin()], vec![r * p[1].cos(), r * p[1].sin()])
                }),
                grid,
                vec![dt, dt, dr],
            )
        };

    let eval = |p: &[f64]| -> Option<f64> {
        let (x, y) = to_pair(p);
        (x != y).then(|| layer.ratio_unchecked(&x, &y))
    };

    let mut best_max: Option<(f64, &Vec<f64>)> = None;
    let mut best_min: Option<(f64, &Vec<f64>)> = None;
    for p in &grid {
        if let Some(r) = eval(p) {
            if best_max.is_none_or(|(v, _)| r > v) {
                best_max = Some((r, p));
            }
            if best_min.is_none_or(|(v, _)| r < v) {
                best_min = Some((r, p));
            }
        }
    }
    let (_, pmax) = best_max.expect("grid has non-degenerate pairs");
    let (_, pmin) = best_min.expect("grid has non-degenerate pairs");

    let mut p_hi = pmax.clone();
    let u_lo = coordinate_search(&mut p_hi, &mut steps.clone(), REFINE_ITERS, Direction::Max, eval)
        .expect("grid extreme is valid");
    let mut p_lo = pmin.clone();
    let l_hi = coordinate_search(&mut p_lo, &mut steps.clone(), REFINE_ITERS, Direction::Min, eval)
        .expect("grid extreme is valid");

    let u_hi = if a.rows() <= MAX_EXACT_ROWS {
        Some(exact_upper_lipschitz(a)?)
    } else {
        None
    };
    let (ux, uy) = to_pair(&p_hi);
    let (lx, ly) = to_pair(&p_lo);
    Ok(BiLipBracket::from_extremes(
        u_lo,
        l_hi,
        u_hi,
        None,
        grid.len(),
        None,
        Some(PairWitness { x: ux, y: uy }),
        Some(PairWitness { x: lx, y: ly }),
    ))
}

/// Activation patterns at points on the arrangement's lines (faces of
/// dimension one), using the closed convention `<a_j, x> >= 0`.
#[doc(hidden)]
pub fn line_face_patterns(a: &Matrix) -> Result<Vec<u32>> {
    check_limits(a)?;
    let n = a.cols();
    let rows: Vec<Vec<f64>> = a.row_iter().filter(|r| norm(r) > 0.0).map(<[f64]>::to_vec).collect();
    let mut out = BTreeSet::new();
    if n < 2 {
        return Ok(Vec::new());
    }
    for subset in combinations(rows.len(), n - 1) {
        let basis = gram_schmidt(subset.iter().map(|&k| rows[k].as_slice()), n);
        if basis.len() < n - 1 {
            continue;
        }
        let u = complement(&basis, n).swap_remove(0);
        for sign in [1.0, -1.0] {
            let mask = a
                .row_iter()
                .enumerate()
                .filter(|(_, r)| {
                    let v = sign * dot(r, &u);
                    norm(r) > 0.0 && v >= -ON_HYPERPLANE_TOL * norm(r)
                })
                .fold(0u32, |acc, (j, _)| acc | (1 << j));
            out.insert(mask);
        }
    }
    Ok(out.into_iter().collect())
}
