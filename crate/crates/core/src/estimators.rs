//! Sampling-based brackets on the bi-Lipschitz constants of a layer and the
//! constructive `sqrt(2)` certificate.
//!
//! A sampled ratio is attained by an explicit pair, so the largest one seen
//! bounds `U` from below and the smallest bounds `L` from above. Nothing here
//! claims to find the true extremes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, BilipError, Result};
use crate::geometry::LayerMap;
use crate::numerics::{norm, singular_extremes, unit_sphere_with, Matrix, RngSeed};
use rand::Rng;

/// `l_hi` below this is reported as a collapsed region with infinite `beta_lo`.
pub const COLLAPSE_TOL: f64 = 1e-13;
/// Offset used for near-coincident sample pairs.
pub const NEAR_PAIR_EPS: f64 = 1e-3;
/// Pairs per parallel work item; fixed so results ignore the thread count.
pub(crate) const PAIR_BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWitness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// One-sided bounds on `U` and `L`, plus the derived lower bound on `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLipBracket {
    /// Largest observed ratio; `U >= u_lo`.
    pub u_lo: f64,
    /// Smallest observed ratio; `L <= l_hi`.
    pub l_hi: f64,
    /// Certified `U <= u_hi`, when available.
    pub u_hi: Option<f64>,
    /// Certified `L >= l_lo`, when available.
    pub l_lo: Option<f64>,
    /// `u_lo / l_hi`, or `+inf` when the bracket collapsed.
    pub beta_lo: f64,
    /// `l_hi < COLLAPSE_TOL`: some sampled pair was mapped to (almost) the
    /// same output, so `L` is zero or numerically so.
    pub collapsed: bool,
    /// Pairs contributing to the extremes.
    pub sample_count: usize,
    /// Drawn pairs with `x == y`, left out.
    pub degenerate_skipped: usize,
    pub seed: Option<RngSeed>,
    pub u_witness: Option<PairWitness>,
    pub l_witness: Option<PairWitness>,
}

impl BiLipBracket {
    #[allow(clippy::too_many_arguments)]
    pub fn from_extremes(
        u_lo: f64,
        l_hi: f64,
        u_hi: Option<f64>,
        l_lo: Option<f64>,
        sample_count: usize,
        seed: Option<RngSeed>,
        u_witness: Option<PairWitness>,
        l_witness: Option<PairWitness>,
    ) -> Self {
        let collapsed = l_hi < COLLAPSE_TOL;
        let beta_lo = if collapsed { f64::INFINITY } else { u_lo / l_hi };
        Self {
            u_lo,
            l_hi,
            u_hi,
            l_lo,
            beta_lo,
            collapsed,
            sample_count,
            degenerate_skipped: 0,
            seed,
            u_witness,
            l_witness,
        }
    }

    /// `u_hi / l_lo` when both certified bounds are present.
    pub fn beta_hi(&self) -> Option<f64> {
        match (self.u_hi, self.l_lo) {
            (Some(u), Some(l)) if l > 0.0 => Some(u / l),
            (Some(_), Some(_)) => Some(f64::INFINITY),
            _ => None,
        }
    }
}

/// The kind of pair drawn at a given sample index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    SphereSphere,
    Antipodal,
    NearCoincident,
    ToOrigin,
}

impl PairKind {
    /// Mixture 2:1:1:1 over sphere pairs, antipodal, near-coincident and
    /// origin pairs when structured pairs are on.
    pub fn for_index(index: usize, structured: bool) -> Self {
        if !structured {
            return Self::SphereSphere;
        }
        match index % 5 {
            0 | 1 => Self::SphereSphere,
            2 => Self::Antipodal,
            3 => Self::NearCoincident,
            _ => Self::ToOrigin,
        }
    }
}

/// Pair number `index` of the sampling scheme. Depends only on
/// `(n, index, seed, structured, spread)`, never on the layer, so distinct
/// layers can be compared on shared pairs.
///
/// With `spread`, both points are multiplied by a common log-uniform factor
/// in `[1e-2, 1e2]`; only layers with bias care about absolute scale.
pub fn sample_pair(
    n: usize,
    index: usize,
    seed: RngSeed,
    structured: bool,
    spread: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed.substream(index as u64).rng();
    let x = unit_sphere_with(&mut rng, n);
    let y = match PairKind::for_index(index, structured) {
        PairKind::SphereSphere => unit_sphere_with(&mut rng, n),
        PairKind::Antipodal => x.iter().map(|v| -v).collect(),
        PairKind::NearCoincident => {
            let u = unit_sphere_with(&mut rng, n);
            x.iter().zip(&u).map(|(a, b)| a + NEAR_PAIR_EPS * b).collect()
        }
        PairKind::ToOrigin => vec![0.0; n],
    };
    if spread {
        let s = 10f64.powf(rng.random_range(-2.0..2.0));
        (x.iter().map(|v| v * s).collect(), y.iter().map(|v| v * s).collect())
    } else {
        (x, y)
    }
}

pub fn sample_pairs(
    n: usize,
    count: usize,
    seed: RngSeed,
    structured: bool,
    spread: bool,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_pair(n, i, seed, structured, spread))
        .collect()
}

/// Index and value of the first minimum and first maximum, skipping `None`.
fn extremes(values: &[Option<f64>]) -> Option<((usize, f64), (usize, f64))> {
    let mut out: Option<((usize, f64), (usize, f64))> = None;
    for (i, v) in values.iter().enumerate() {
        let Some(v) = *v else { continue };
        match &mut out {
            None => out = Some(((i, v), (i, v))),
            Some((lo, hi)) => {
                if v < lo.1 {
                    *lo = (i, v);
                }
                if v > hi.1 {
                    *hi = (i, v);
                }
            }
        }
    }
    out
}

/// Certified `U <= sigma_max(A) / sqrt(m)`, valid with or without bias since
/// ReLU is 1-Lipschitz.
pub fn spectral_upper(a: &Matrix) -> f64 {
    singular_extremes(a).0 / (a.rows() as f64).sqrt()
}

/// Bracket from `pair_count` seeded pairs. Pair `i` comes from substream `i`
/// and the extremes are reduced in index order, so the result is identical
/// for any number of worker threads and a longer run extends a shorter one.
pub fn sampled_bilip(
    layer: &LayerMap,
    pair_count: usize,
    seed: RngSeed,
    include_structured: bool,
) -> Result<BiLipBracket> {
    if pair_count == 0 {
        return Err(input("pair_count must be at least 1"));
    }
    let n = layer.input_dim();
    let spread = layer.has_bias();
    let ratios: Vec<Option<f64>> = (0..pair_count.div_ceil(PAIR_BLOCK))
        .into_par_iter()
        .flat_map_iter(|blk| {
            let range = blk * PAIR_BLOCK..((blk + 1) * PAIR_BLOCK).min(pair_count);
            let pairs: Vec<_> = range.map(|i| sample_pair(n, i, seed, include_structured, spread)).collect();
            let num = layer.sq_output_distances(&pairs);
            let m = layer.output_dim() as f64;
            pairs
                .into_iter()
                .zip(num)
                .map(move |((x, y), num)| {
                    let den: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                    (x != y).then(|| (num / (m * den)).sqrt())
                })
                .collect::<Vec<_>>()
        })
        .collect();
    if let Some(bad) = ratios.iter().position(|r| r.is_some_and(|v| !v.is_finite())) {
        return Err(BilipError::Numeric(format!("non-finite ratio at pair {bad}")));
    }
    let degenerate_skipped = ratios.iter().filter(|r| r.is_none()).count();
    let ((lo_i, l_hi), (hi_i, u_lo)) = extremes(&ratios).ok_or_else(|| {
        input("every sampled pair was degenerate (x == y); use structured pairs in one dimension")
    })?;
    let witness = |i| {
        let (x, y) = sample_pair(n, i, seed, include_structured, spread);
        Some(PairWitness { x, y })
    };
    let mut bracket = BiLipBracket::from_extremes(
        u_lo,
        l_hi,
        Some(spectral_upper(&layer.a)),
        None,
        pair_count - degenerate_skipped,
        Some(seed),
        witness(hi_i),
        witness(lo_i),
    );
    bracket.degenerate_skipped = degenerate_skipped;
    Ok(bracket)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

/// Coordinate search: try `+-step` on each coordinate, keep strict
/// improvements, halve every step after a sweep without one. `eval`
/// returning `None` rejects a move. Never returns a worse value than the
/// start.
pub(crate) fn coordinate_search(
    params: &mut [f64],
    steps: &mut [f64],
    iters: usize,
    direction: Direction,
    eval: impl Fn(&[f64]) -> Option<f64>,
) -> Option<f64> {
    let better = |a: f64, b: f64| match direction {
        Direction::Min => a < b,
        Direction::Max => a > b,
    };
    let mut best = eval(params)?;
    for _ in 0..iters {
        let mut improved = false;
        for i in 0..params.len() {
            for sign in [1.0, -1.0] {
                let old = params[i];
                params[i] = old + sign * steps[i];
                match eval(params) {
                    Some(v) if better(v, best) => {
                        best = v;
                        improved = true;
                    }
                    _ => params[i] = old,
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    Some(best)
}

/// Locally polishes a pair towards a smaller (`Min`) or larger (`Max`)
/// ratio. Moves onto `x == y` are rejected, so the result is always a valid
/// witness and never worse than the starting pair.
pub fn refine_extreme(
    layer: &LayerMap,
    x: &[f64],
    y: &[f64],
    direction: Direction,
    iters: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = layer.input_dim();
    for v in [x, y] {
        if v.len() != n {
            return Err(BilipError::Dimension { expected: n, got: v.len() });
        }
    }
    if x == y {
        return Err(BilipError::DegeneratePair);
    }
    let mut params: Vec<f64> = x.iter().chain(y).copied().collect();
    let step = 0.1 * crate::numerics::dist(x, y);
    let mut steps = vec![step; 2 * n];
    let eval = |p: &[f64]| {
        let (px, py) = p.split_at(n);
        if px == py {
            return None;
        }
        let r = layer.ratio_unchecked(px, py);
        r.is_finite().then_some(r)
    };
    let best = coordinate_search(&mut params, &mut steps, iters, direction, eval)
        .ok_or_else(|| BilipError::Numeric("starting ratio is not finite".into()))?;
    let (px, py) = params.split_at(n);
    Ok((px.to_vec(), py.to_vec(), best))
}

/// Witness that `beta >= sqrt(2)` for an unbiased layer.
///
/// With `r(x) = ||relu(Ax)|| / sqrt(m)`, the pair `(x, -x)` has ratio
/// `sqrt(r(x)^2 + r(-x)^2) / 2` for unit `x`, which bounds `L` from above,
/// while each `r` value bounds `U` from below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sqrt2Certificate {
    /// Unit probe `x2` with the smallest `r` among all probes and negations.
    pub probe: Vec<f64>,
    pub r_plus: f64,
    pub r_minus: f64,
    pub u_lb: f64,
    pub l_ub: f64,
    pub cert_ratio: f64,
    pub probe_count: usize,
}

/// Certificate from explicit unit probes; their negations are added.
pub fn sqrt2_certificate_from_probes(a: &Matrix, probes: &[Vec<f64>]) -> Result<Sqrt2Certificate> {
    if probes.is_empty() {
        return Err(input("at least one probe is required"));
    }
    let layer = LayerMap::unbiased(a.clone());
    let inv_m = 1.0 / a.rows() as f64;
    let r = |v: &[f64]| (layer.sq_output_norm(v) * inv_m).sqrt();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut u_lb = 0.0_f64;
    for p in probes {
        if p.len() != a.cols() {
            return Err(BilipError::Dimension { expected: a.cols(), got: p.len() });
        }
        let len = norm(p);
        if !(len > 0.0) {
            return Err(input("probe must be nonzero"));
        }
        let unit: Vec<f64> = p.iter().map(|v| v / len).collect();
        let neg: Vec<f64> = unit.iter().map(|v| -v).collect();
        for cand in [unit, neg] {
            let rc = r(&cand);
            u_lb = u_lb.max(rc);
            if best.as_ref().is_none_or(|(b, _)| rc < *b) {
                best = Some((rc, cand));
            }
        }
    }
    if u_lb == 0.0 {
        return Err(BilipError::ZeroMatrix);
    }
    let (r_plus, probe) = best.expect("at least one probe");
    let neg: Vec<f64> = probe.iter().map(|v| -v).collect();
    let r_minus = r(&neg);
    let l_ub = ((r_plus * r_plus + r_minus * r_minus) / 4.0).sqrt();
    let cert_ratio = if l_ub > 0.0 { u_lb / l_ub } else { f64::INFINITY };
    Ok(Sqrt2Certificate {
        probe,
        r_plus,
        r_minus,
        u_lb,
        l_ub,
        cert_ratio,
        probe_count: probes.len(),
    })
}

/// Certificate from `probe_count` seeded uniform probes (probe `i` from
/// substream `i`).
pub fn sqrt2_certificate(a: &Matrix, probe_count: usize, seed: RngSeed) -> Result<Sqrt2Certificate> {
    if probe_count == 0 {
        return Err(input("probe_count must be at least 1"));
    }
    let probes: Vec<Vec<f64>> = (0..probe_count)
        .map(|i| unit_sphere_with(&mut seed.substream(i as u64).rng(), a.cols()))
        .collect();
    sqrt2_certificate_from_probes(a, &probes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleInvarianceReport {
    pub c: f64,
    pub pair_count: usize,
    /// Max over pairs of `|ratio(cA, cb) - c ratio(A, b)| / (c ratio(A, b))`.
    pub max_ratio_rel_dev: f64,
    pub beta_lo: f64,
    pub beta_lo_scaled: f64,
    pub beta_rel_dev: f64,
    pub passed: bool,
}

/// Relative tolerance for the scale-invariance checks.
pub const SCALE_TOL: f64 = 1e-12;

fn beta_from_ratios(ratios: &[f64]) -> f64 {
    let wrapped: Vec<Option<f64>> = ratios.iter().copied().map(Some).collect();
    let ((_, lo), (_, hi)) = extremes(&wrapped).expect("nonempty");
    if lo < COLLAPSE_TOL {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn rel_dev(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Compares the layer with `(cA, cb)` on shared pairs: every ratio should
/// scale by exactly `c` and `beta_lo` should not move.
pub fn scale_invariance_check(
    layer: &LayerMap,
    c: f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<ScaleInvarianceReport> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(input(format!("scale factor must be positive and finite, got {c}")));
    }
    if pairs.is_empty() {
        return Err(input("at least one pair is required"));
    }
    let scaled = layer.scaled(c);
    let mut base = Vec::with_capacity(pairs.len());
    let mut other = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        base.push(crate::geometry::pairwise_ratio(layer, x, y)?);
        other.push(crate::geometry::pairwise_ratio(&scaled, x, y)?);
    }
    let max_ratio_rel_dev = base
        .iter()
        .zip(&other)
        .map(|(r, s)| rel_dev(c * r, *s))
        .fold(0.0, f64::max);
    let beta_lo = beta_from_ratios(&base);
    let beta_lo_scaled = beta_from_ratios(&other);
    let beta_rel_dev = if beta_lo.is_infinite() && beta_lo_scaled.is_infinite() {
        0.0
    } else {
        rel_dev(beta_lo, beta_lo_scaled)
    };
    Ok(ScaleInvarianceReport {
        c,
        pair_count: pairs.len(),
        max_ratio_rel_dev,
        beta_lo,
        beta_lo_scaled,
        beta_rel_dev,
        passed: max_ratio_rel_dev <= SCALE_TOL && beta_rel_dev <= SCALE_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasLimitReport {
    pub alpha: f64,
    pub pair_count: usize,
    pub beta_lo_unbiased: f64,
    pub beta_lo_biased_scaled: f64,
    pub abs_dev: f64,
}

/// Default magnification for [`bias_limit_check`].
pub const BIAS_LIMIT_ALPHA: f64 = 1e6;

/// `beta_lo` of the biased layer on `(alpha x, alpha y)` against `beta_lo`
/// of the unbiased layer on `(x, y)`. Since
/// `ratio(A, b, alpha x, alpha y) = ratio(A, b / alpha, x, y)`, the two
/// agree as `alpha` grows.
pub fn bias_limit_check(
    layer: &LayerMap,
    pairs: &[(Vec<f64>, Vec<f64>)],
    alpha: f64,
) -> Result<BiasLimitReport> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(input(format!("alpha must be positive and finite, got {alpha}")));
    }
    if pairs.is_empty() {
        return Err(input("at least one pair is required"));
    }
    let plain = LayerMap::unbiased(layer.a.clone());
    let mut base = Vec::with_capacity(pairs.len());
    let mut far = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        base.push(crate::geometry::pairwise_ratio(&plain, x, y)?);
        let (ax, ay): (Vec<f64>, Vec<f64>) =
            (x.iter().map(|v| v * alpha).collect(), y.iter().map(|v| v * alpha).collect());
        far.push(crate::geometry::pairwise_ratio(layer, &ax, &ay)?);
    }
    let beta_lo_unbiased = beta_from_ratios(&base);
    let beta_lo_biased_scaled = beta_from_ratios(&far);
    let abs_dev = if beta_lo_unbiased == beta_lo_biased_scaled {
        0.0
    } else {
        (beta_lo_unbiased - beta_lo_biased_scaled).abs()
    };
    Ok(BiasLimitReport {
        alpha,
        pair_count: pairs.len(),
        beta_lo_unbiased,
        beta_lo_biased_scaled,
        abs_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_matrix;
    use approx::assert_abs_diff_eq;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    fn opposed() -> Matrix {
        Matrix::from_rows(&[[1.0], [-1.0]]).unwrap()
    }

    #[test]
    fn opposed_pair_sampled_beta() {
        let layer = LayerMap::unbiased(opposed());
        let b = sampled_bilip(&layer, 100_000, RngSeed::new(3), true).unwrap();
        assert!(b.beta_lo >= 1.40 && b.beta_lo <= 1.4143, "beta_lo = {}", b.beta_lo);
        assert!(b.u_lo <= b.u_hi.unwrap() + 1e-15);
    }

    #[test]
    fn identity_collapses() {
        let layer = LayerMap::unbiased(Matrix::identity(2));
        let b = sampled_bilip(&layer, 10_000, RngSeed::new(1), true).unwrap();
        assert!(b.collapsed);
        assert!(b.beta_lo.is_infinite());
        assert_eq!(b.l_hi, 0.0);
        let w = b.l_witness.unwrap();
        assert!(w.x.iter().chain(&w.y).all(|&v| v <= 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_prefix_monotone() {
        let a = gaussian_matrix(12, 3, RngSeed::new(9)).unwrap();
        let layer = LayerMap::unbiased(a);
        let s = RngSeed::new(4);
        let b1 = sampled_bilip(&layer, 2000, s, true).unwrap();
        let b2 = sampled_bilip(&layer, 2000, s, true).unwrap();
        assert_eq!(b1, b2);
        let bigger = sampled_bilip(&layer, 4000, s, true).unwrap();
        assert!(bigger.u_lo >= b1.u_lo);
        assert!(bigger.l_hi <= b1.l_hi);
    }

    #[test]
    fn sampling_independent_of_thread_count() {
        let a = gaussian_matrix(30, 4, RngSeed::new(2)).unwrap();
        let layer = LayerMap::new(a, (0..30).map(|i| i as f64 * 0.1 - 1.5).collect()).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sampled_bilip(&layer, 5000, RngSeed::new(8), true).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn pair_mixture_shapes() {
        let s = RngSeed::new(5);
        for i in 0..10 {
            let (x, y) = sample_pair(3, i, s, true, false);
            assert_abs_diff_eq!(norm(&x), 1.0, epsilon = 1e-12);
            match PairKind::for_index(i, true) {
                PairKind::SphereSphere => assert_abs_diff_eq!(norm(&y), 1.0, epsilon = 1e-12),
                PairKind::Antipodal => assert!(x.iter().zip(&y).all(|(a, b)| *a == -*b)),
                PairKind::NearCoincident => {
                    assert_abs_diff_eq!(crate::numerics::dist(&x, &y), NEAR_PAIR_EPS, epsilon = 1e-12)
                }
                PairKind::ToOrigin => assert!(y.iter().all(|&v| v == 0.0)),
            }
        }
        let (x, _) = sample_pair(3, 0, s, false, true);
        assert!(norm(&x) >= 1e-2 && norm(&x) <= 1e2);
    }

    #[test]
    fn refine_reaches_opposed_max() {
        let layer = LayerMap::unbiased(opposed());
        let b = sampled_bilip(&layer, 1000, RngSeed::new(1), true).unwrap();
        let w = b.u_witness.unwrap();
        let (_, _, r) = refine_extreme(&layer, &w.x, &w.y, Direction::Max, 50).unwrap();
        assert_abs_diff_eq!(r, 1.0 / SQRT2, epsilon = 1e-6);
        // A start on the opposite-sign branch climbs to the same value.
        let (_, _, r) = refine_extreme(&layer, &[1.0], &[-0.5], Direction::Max, 60).unwrap();
        assert_abs_diff_eq!(r, 1.0 / SQRT2, epsilon = 1e-6);
    }

    #[test]
    fn refine_is_monotone() {
        let a = gaussian_matrix(7, 3, RngSeed::new(11)).unwrap();
        let layer = LayerMap::unbiased(a);
        for i in 0..20 {
            let (x, y) = sample_pair(3, i, RngSeed::new(12), true, false);
            let start = layer.ratio_unchecked(&x, &y);
            let (_, _, hi) = refine_extreme(&layer, &x, &y, Direction::Max, 10).unwrap();
            let (_, _, lo) = refine_extreme(&layer, &x, &y, Direction::Min, 10).unwrap();
            assert!(hi >= start && lo <= start);
        }
    }

    #[test]
    fn refine_zero_iters_is_identity() {
        let layer = LayerMap::unbiased(opposed());
        let (x, y, r) = refine_extreme(&layer, &[0.3], &[0.9], Direction::Min, 0).unwrap();
        assert_eq!((x, y), (vec![0.3], vec![0.9]));
        assert_eq!(r, layer.ratio_unchecked(&[0.3], &[0.9]));
        assert_eq!(
            refine_extreme(&layer, &[1.0], &[1.0], Direction::Min, 3),
            Err(BilipError::DegeneratePair)
        );
    }

    #[test]
    fn certificate_on_opposed_pair_is_tight() {
        let c = sqrt2_certificate_from_probes(&opposed(), &[vec![1.0], vec![-1.0]]).unwrap();
        assert_abs_diff_eq!(c.r_plus, 1.0 / SQRT2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.r_minus, 1.0 / SQRT2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.l_ub, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.u_lb, 1.0 / SQRT2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.cert_ratio, SQRT2, epsilon = 1e-15);
    }

    #[test]
    fn certificate_invariant_on_random_matrices() {
        let id = sqrt2_certificate(&Matrix::identity(2), 16, RngSeed::new(0)).unwrap();
        assert!(id.cert_ratio >= SQRT2 - 1e-9);
        for s in 0..100 {
            let a = gaussian_matrix(8, 3, RngSeed::with_stream(s, 1)).unwrap();
            let c = sqrt2_certificate(&a, 32, RngSeed::with_stream(s, 2)).unwrap();
            assert!(c.cert_ratio >= SQRT2 - 1e-9, "seed {s}: {}", c.cert_ratio);
        }
    }

    #[test]
    fn certificate_rejects_zero_matrix() {
        let z = Matrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert_eq!(sqrt2_certificate(&z, 8, RngSeed::new(1)), Err(BilipError::ZeroMatrix));
    }

    #[test]
    fn scale_invariance_examples() {
        let a = gaussian_matrix(16, 4, RngSeed::new(21)).unwrap();
        let layer = LayerMap::new(a, (0..16).map(|i| (i as f64).sin()).collect()).unwrap();
        let pairs = sample_pairs(4, 1000, RngSeed::new(22), true, true);
        let one = scale_invariance_check(&layer, 1.0, &pairs).unwrap();
        assert_eq!(one.max_ratio_rel_dev, 0.0);
        assert_eq!(one.beta_rel_dev, 0.0);
        for c in [3.5, 1e-8] {
            let r = scale_invariance_check(&layer, c, &pairs).unwrap();
            assert!(r.passed, "c = {c}: {r:?}");
        }
        assert!(scale_invariance_check(&layer, 0.0, &pairs).is_err());
        assert!(scale_invariance_check(&layer, -2.0, &pairs).is_err());
    }

    #[test]
    fn bias_vanishes_in_the_scaling_limit() {
        for s in 0..10 {
            let a = gaussian_matrix(10, 3, RngSeed::with_stream(s, 1)).unwrap();
            let b: Vec<f64> = crate::numerics::gaussian_vector(&mut RngSeed::with_stream(s, 2).rng(), 10);
            let layer = LayerMap::new(a, b).unwrap();
            let pairs = sample_pairs(3, 500, RngSeed::with_stream(s, 3), true, false);
            let r = bias_limit_check(&layer, &pairs, BIAS_LIMIT_ALPHA).unwrap();
            assert!(r.abs_dev <= 1e-4, "seed {s}: {r:?}");
        }
    }

    #[test]
    fn beta_hi_from_bounds() {
        let b = BiLipBracket::from_extremes(1.0, 0.5, Some(2.0), Some(0.25), 1, None, None, None);
        assert_eq!(b.beta_lo, 2.0);
        assert_eq!(b.beta_hi(), Some(8.0));
        assert!(b.beta_lo <= b.beta_hi().unwrap());
    }
}
