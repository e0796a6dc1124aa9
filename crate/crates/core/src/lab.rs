//! Seeded Monte-Carlo experiments on Gaussian layers.
//!
//! Every experiment draws its randomness from named substreams of the
//! configured seed and reduces per-chunk or per-pair partial results in index
//! order, so reports are bit-identical for any number of worker threads.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, BilipError, Result};
use crate::estimators::{sampled_bilip, sqrt2_certificate, PAIR_BLOCK};
use crate::geometry::{angle_theta, expected_sq_distance, phi, predicted_cos_angle, LayerMap};
use crate::numerics::{dist, dot, gaussian_matrix, gaussian_vector, norm, unit_sphere_with, RngSeed};

const STREAM_MATRIX: u64 = 1;
const STREAM_PAIRS: u64 = 2;
const STREAM_ROWS: u64 = 3;
const STREAM_DRAWS: u64 = 4;
const STREAM_PROBES: u64 = 5;
const STREAM_FRESH: u64 = 6;
const STREAM_CERT: u64 = 7;

/// Rows per generator substream in Monte-Carlo averages.
const MC_CHUNK: usize = 4096;
/// Acceptance slack, in standard errors, for Monte-Carlo comparisons.
pub const SE_SLACK: f64 = 4.0;
/// Offset for near-coincident pairs.
pub const NEAR_PAIR_EPS: f64 = 1e-3;
/// Tolerance on the post-activation angle deviation.
pub const ANGLE_TOL: f64 = 0.05;
/// Window for the `m`-normalised squared ratio at small distances.
pub const SMALL_DISTANCE_WINDOW: (f64, f64) = (0.4, 0.6);
/// Offsets `||x - y|| / ||x||` probed by [`small_distance_profile`].
pub const SMALL_DISTANCE_EPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
/// Band width `delta` at which the band check is judged; narrower bands
/// are informational.
pub const BAND_PINNED_DELTA: f64 = 0.5;
/// Fresh matrices drawn for the chi-square row of [`rip_check`].
pub const CHI_SQUARE_MATRICES: usize = 200;
/// Iterations of the projected-gradient width maximiser for custom cones.
pub const WIDTH_PG_ITERS: usize = 200;

// ---------------------------------------------------------------- cones

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConeKind {
    FullSpace,
    SparseCone { k: usize },
    /// `{x : <h, x> >= 0 for every normal h}`.
    CustomHalfspaces { normals: Vec<Vec<f64>> },
}

/// A cone in `R^n`; membership is invariant under positive scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub kind: ConeKind,
    pub n: usize,
}

impl ConeSpec {
    pub fn full(n: usize) -> Self {
        Self { kind: ConeKind::FullSpace, n }
    }

    pub fn sparse(n: usize, k: usize) -> Self {
        Self { kind: ConeKind::SparseCone { k }, n }
    }

    pub fn halfspaces(normals: Vec<Vec<f64>>) -> Result<Self> {
        let n = normals.first().map_or(0, Vec::len);
        let spec = Self { kind: ConeKind::CustomHalfspaces { normals }, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(input("cone dimension must be positive"));
        }
        match &self.kind {
            ConeKind::FullSpace => Ok(()),
            ConeKind::SparseCone { k } => {
                if *k == 0 || *k > self.n {
                    Err(input(format!("sparsity k must lie in 1..={}, got {k}", self.n)))
                } else {
                    Ok(())
                }
            }
            ConeKind::CustomHalfspaces { normals } => {
                if normals.is_empty() {
                    return Err(input("custom cone needs at least one normal"));
                }
                for h in normals {
                    if h.len() != self.n {
                        return Err(BilipError::Dimension { expected: self.n, got: h.len() });
                    }
                    if !h.iter().all(|v| v.is_finite()) || norm(h) == 0.0 {
                        return Err(input("cone normals must be finite and nonzero"));
                    }
                }
                if interior_point(normals).is_none() {
                    return Err(BilipError::EmptyInterior);
                }
                Ok(())
            }
        }
    }

    pub fn member(&self, x: &[f64]) -> bool {
        match &self.kind {
            ConeKind::FullSpace => true,
            ConeKind::SparseCone { k } => x.iter().filter(|&&v| v != 0.0).count() <= *k,
            ConeKind::CustomHalfspaces { normals } => normals.iter().all(|h| dot(h, x) >= 0.0),
        }
    }

    /// A unit vector in the cone. Uniform on the sphere for the full space,
    /// uniform support then Gaussian direction for sparse cones, and for
    /// custom cones rejection from the sphere with a projection fallback.
    pub fn sample_sphere<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            ConeKind::FullSpace => unit_sphere_with(rng, self.n),
            ConeKind::SparseCone { k } => loop {
                let mut x = vec![0.0; self.n];
                for i in sample_indices(rng, self.n, *k) {
                    x[i] = rng.sample(StandardNormal);
                }
                let len = norm(&x);
                if len > 0.0 {
                    break x.into_iter().map(|v| v / len).collect();
                }
            },
            ConeKind::CustomHalfspaces { normals } => {
                for _ in 0..64 {
                    let x = unit_sphere_with(rng, self.n);
                    if self.member(&x) {
                        return x;
                    }
                }
                loop {
                    let g = gaussian_vector(rng, self.n);
                    let p = project_polyhedral(normals, &g);
                    let len = norm(&p);
                    if len > 1e-9 {
                        let x: Vec<f64> = p.into_iter().map(|v| v / len).collect();
                        if self.member(&x) {
                            return x;
                        }
                    }
                }
            }
        }
    }

    /// A point of the cone at distance about `eps` from `x` (a unit cone
    /// point), different from `x`.
    fn perturb<R: Rng + ?Sized>(&self, x: &[f64], eps: f64, rng: &mut R) -> Vec<f64> {
        match &self.kind {
            ConeKind::FullSpace => {
                let u = unit_sphere_with(rng, self.n);
                x.iter().zip(&u).map(|(a, b)| a + eps * b).collect()
            }
            ConeKind::SparseCone { .. } => {
                let support: Vec<usize> = (0..self.n).filter(|&i| x[i] != 0.0).collect();
                let mut u = vec![0.0; self.n];
                let g = unit_sphere_with(rng, support.len());
                for (i, v) in support.iter().zip(g) {
                    u[*i] = v;
                }
                x.iter().zip(&u).map(|(a, b)| a + eps * b).collect()
            }
            ConeKind::CustomHalfspaces { .. } => loop {
                // Convex cone: points on the segment towards another member stay inside.
                let u = self.sample_sphere(rng);
                let gap = dist(&u, x);
                if gap > eps {
                    let t = eps / gap;
                    break x.iter().zip(&u).map(|(a, b)| (1.0 - t) * a + t * b).collect();
                }
            },
        }
    }

    /// Lower bound on `sup { <g, d> : d in (S - S), ||d|| <= 1 }`; exact
    /// for full space and sparse cones.
    pub fn width_max(&self, g: &[f64]) -> f64 {
        match &self.kind {
            ConeKind::FullSpace => norm(g),
            ConeKind::SparseCone { k } => {
                let mut mags: Vec<f64> = g.iter().map(|v| v * v).collect();
                let keep = (2 * k).min(mags.len());
                mags.sort_by(|a, b| b.total_cmp(a));
                mags[..keep].iter().sum::<f64>().sqrt()
            }
            ConeKind::CustomHalfspaces { normals } => custom_width(normals, g),
        }
    }

    /// Whether [`ConeSpec::width_max`] is only a lower bound.
    pub fn width_is_lower_bound(&self) -> bool {
        matches!(self.kind, ConeKind::CustomHalfspaces { .. })
    }
}

/// Strictly feasible point of `{Hx > 0}` by the perceptron update, or `None`
/// if none is found within the iteration budget.
fn interior_point(normals: &[Vec<f64>]) -> Option<Vec<f64>> {
    let units: Vec<Vec<f64>> = normals
        .iter()
        .map(|h| {
            let l = norm(h);
            h.iter().map(|v| v / l).collect()
        })
        .collect();
    let n = units[0].len();
    let mut x: Vec<f64> = vec![0.0; n];
    for u in &units {
        x.iter_mut().zip(u).for_each(|(a, b)| *a += b);
    }
    for _ in 0..10_000 {
        let (worst, margin) = units
            .iter()
            .map(|u| dot(u, &x))
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        if margin > 1e-12 * norm(&x).max(1.0) {
            return Some(x);
        }
        x.iter_mut().zip(&units[worst]).for_each(|(a, b)| *a += b);
    }
    None
}

/// Approximate Euclidean projection onto `{Hx >= 0}` by Dykstra's method.
fn project_polyhedral(normals: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let mut x = z.to_vec();
    let mut corr = vec![vec![0.0; z.len()]; normals.len()];
    for _ in 0..100 {
        for (h, p) in normals.iter().zip(corr.iter_mut()) {
            let y: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a + b).collect();
            let s = dot(h, &y);
            let proj: Vec<f64> = if s >= 0.0 {
                y.clone()
            } else {
                let c = s / dot(h, h);
                y.iter().zip(h).map(|(a, b)| a - c * b).collect()
            };
            for ((pi, yi), qi) in p.iter_mut().zip(&y).zip(&proj) {
                *pi = yi - qi;
            }
            x = proj;
        }
    }
    x
}

fn custom_width(normals: &[Vec<f64>], g: &[f64]) -> f64 {
    let inside = |v: &[f64]| normals.iter().all(|h| dot(h, v) >= -1e-12 * norm(h) * norm(v));
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut u = project_polyhedral(normals, g);
    let mut v = project_polyhedral(normals, &neg);
    let mut best = 0.0_f64;
    for it in 0..WIDTH_PG_ITERS {
        let d: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let len = norm(&d);
        if len > 0.0 {
            if inside(&u) && inside(&v) {
                best = best.max(dot(g, &d) / len);
            }
            u.iter_mut().for_each(|t| *t /= len);
            v.iter_mut().for_each(|t| *t /= len);
        }
        let step = 1.0 / (it + 1) as f64;
        let up: Vec<f64> = u.iter().zip(g).map(|(a, b)| a + step * b).collect();
        let vp: Vec<f64> = v.iter().zip(g).map(|(a, b)| a - step * b).collect();
        u = project_polyhedral(normals, &up);
        v = project_polyhedral(normals, &vp);
    }
    best
}

// ---------------------------------------------------------------- config and reports

/// Parameters shared by the experiments. `m` is the number of Gaussian
/// rows: the layer width for matrix experiments and the Monte-Carlo sample
/// size for the expectation checks. `pair_count` counts `(x, y)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub seed: RngSeed,
    pub pair_count: usize,
    pub delta: f64,
    pub alpha: f64,
    pub beta_param: f64,
    /// Regime threshold: a pair is large-distance when
    /// `||x - y|| >= c * max(||x||, ||y||)`.
    pub c: f64,
    pub cone: ConeSpec,
}

impl ExperimentConfig {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            seed: RngSeed::new(seed),
            pair_count: 1000,
            delta: 0.5,
            alpha: 0.1,
            beta_param: 10.0,
            c: 1.0,
            cone: ConeSpec::full(n),
        }
    }

    fn validate_common(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(input("n and m must be positive"));
        }
        if self.pair_count == 0 {
            return Err(input("pair_count must be positive"));
        }
        if self.cone.n != self.n {
            return Err(BilipError::Dimension { expected: self.n, got: self.cone.n });
        }
        self.cone.validate()
    }

    fn validate_lemmas(&self) -> Result<()> {
        self.validate_common()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(input(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta_param >= 10.0) || !self.beta_param.is_finite() {
            return Err(input(format!("beta_param must be at least 10, got {}", self.beta_param)));
        }
        if self.m < 2 {
            return Err(input("Monte-Carlo estimates need m >= 2 rows"));
        }
        Ok(())
    }

    fn validate_band(&self) -> Result<()> {
        self.validate_common()?;
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(input(format!("delta must lie in (0, 0.5], got {}", self.delta)));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(input(format!("c must be positive, got {}", self.c)));
        }
        Ok(())
    }

    fn validate_rip(&self) -> Result<()> {
        self.validate_common()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(input(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// One line of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub check: String,
    /// Row-specific inputs, in display order.
    pub params: Vec<(String, f64)>,
    pub estimate: f64,
    pub standard_error: Option<f64>,
    /// Acceptance window for `estimate`, when the row has one.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sample_count: usize,
    pub violation_count: usize,
    /// Largest amount by which a sample left its window; zero if none did.
    pub worst_violation: f64,
    /// Additional named outputs, in display order.
    pub extras: Vec<(String, f64)>,
    /// `None` for informational rows.
    pub passed: Option<bool>,
}

impl ReportRow {
    fn new(check: &str, estimate: f64) -> Self {
        Self {
            check: check.to_string(),
            params: Vec::new(),
            estimate,
            standard_error: None,
            lower: None,
            upper: None,
            sample_count: 0,
            violation_count: 0,
            worst_violation: 0.0,
            extras: Vec::new(),
            passed: None,
        }
    }

    fn param(mut self, name: &str, value: f64) -> Self {
        self.params.push((name.to_string(), value));
        self
    }

    fn extra(mut self, name: &str, value: f64) -> Self {
        self.extras.push((name.to_string(), value));
        self
    }

    /// Monte-Carlo row judged against `[lower, upper]` with `SE_SLACK`
    /// standard errors of slack on each side.
    fn mc(mut self, est: MeanSe, lower: Option<f64>, upper: Option<f64>) -> Self {
        self.estimate = est.mean;
        self.standard_error = Some(est.se);
        self.sample_count = est.count;
        self.lower = lower;
        self.upper = upper;
        let slack = SE_SLACK * est.se;
        let below = lower.map_or(0.0, |l| (l - slack) - est.mean);
        let above = upper.map_or(0.0, |u| est.mean - (u + slack));
        let excess = below.max(above);
        self.violation_count = usize::from(excess > 0.0);
        self.worst_violation = excess.max(0.0);
        self.passed = Some(excess <= 0.0);
        self
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.params
            .iter()
            .chain(&self.extras)
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    fn new(experiment: &str) -> Self {
        Self { experiment: experiment.to_string(), rows: Vec::new(), warnings: Vec::new() }
    }

    /// False if any judged row failed.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed != Some(false))
    }
}

// ---------------------------------------------------------------- Monte-Carlo engine

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

/// Sum with a fixed binary tree over the slice.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        len => {
            let (a, b) = v.split_at(len / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn mean_se(sums: &[f64], sq: &[f64], count: usize) -> MeanSe {
    let n = count as f64;
    let mean = pairwise_sum(sums) / n;
    let var = ((pairwise_sum(sq) - n * mean * mean) / (n - 1.0)).max(0.0);
    MeanSe { mean, se: (var / n).sqrt(), count }
}

/// Means and standard errors of `K` statistics of `count` independent
/// standard Gaussian vectors in `R^n`.
fn mc_gaussian<const K: usize>(
    n: usize,
    count: usize,
    seed: RngSeed,
    stat: impl Fn(&[f64]) -> [f64; K] + Sync,
) -> [MeanSe; K] {
    let chunks = count.div_ceil(MC_CHUNK);
    let partial: Vec<([f64; K], [f64; K])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed.substream(c as u64).rng();
            let rows = MC_CHUNK.min(count - c * MC_CHUNK);
            let mut a = vec![0.0; n];
            let (mut s, mut q) = ([0.0; K], [0.0; K]);
            for _ in 0..rows {
                a.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                for (k, f) in stat(&a).into_iter().enumerate() {
                    s[k] += f;
                    q[k] += f * f;
                }
            }
            (s, q)
        })
        .collect();
    std::array::from_fn(|k| {
        let s: Vec<f64> = partial.iter().map(|p| p.0[k]).collect();
        let q: Vec<f64> = partial.iter().map(|p| p.1[k]).collect();
        mean_se(&s, &q, count)
    })
}

fn check_draws(count: usize) -> Result<()> {
    if count < 2 {
        return Err(input("at least two draws are required"));
    }
    Ok(())
}

// ---------------------------------------------------------------- width and nets

/// Monte-Carlo estimate of the Gaussian width of `(S - S) ∩ B^n`.
pub fn gaussian_width_mc(spec: &ConeSpec, draws: usize, seed: RngSeed) -> Result<MeanSe> {
    spec.validate()?;
    check_draws(draws)?;
    let vals: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let g = gaussian_vector(&mut seed.substream(i as u64).rng(), spec.n);
            spec.width_max(&g)
        })
        .collect();
    let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
    Ok(mean_se(&vals, &sq, draws))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    pub n: usize,
    pub eps: f64,
    pub net: Vec<Vec<f64>>,
    pub verified: bool,
    /// A probe farther than `eps` from every net point, if one was found.
    pub uncovered: Option<Vec<f64>>,
    pub probes: usize,
    /// `eps * sqrt(ln |net|)`.
    pub sudakov: f64,
}

/// Largest input dimension accepted by [`epsilon_net_sphere`].
pub const NET_MAX_DIM: usize = 6;
const NET_MAX_POOL: usize = 200_000;

/// Greedy farthest-point `eps`-net of the unit sphere, checked against
/// `probes` fresh uniform points.
pub fn epsilon_net_sphere(n: usize, eps: f64, seed: RngSeed, probes: usize) -> Result<NetReport> {
    if n == 0 || n > NET_MAX_DIM {
        return Err(input(format!("sphere dimension must lie in 1..={NET_MAX_DIM}, got {n}")));
    }
    if !(eps > 0.0 && eps < 2.0) {
        return Err(input(format!("eps must lie in (0, 2), got {eps}")));
    }
    let net: Vec<Vec<f64>> = if n == 1 {
        vec![vec![-1.0], vec![1.0]]
    } else {
        // Pool density grows like the covering number; the pool is covered
        // at a slightly smaller radius to leave room for the gaps between
        // pool points.
        let estimate = (4.0 / eps).powi(n as i32 - 1);
        let pool_size = (50.0 * estimate).clamp(2_000.0, NET_MAX_POOL as f64) as usize;
        if estimate * 50.0 > 50.0 * NET_MAX_POOL as f64 {
            return Err(BilipError::OverLimit {
                what: "net size",
                detail: format!("roughly {estimate:.0} points needed for n = {n}, eps = {eps}"),
            });
        }
        let target = if n == 2 { 0.98 * eps } else { 0.85 * eps };
        let pool: Vec<Vec<f64>> = (0..pool_size)
            .into_par_iter()
            .map(|i| unit_sphere_with(&mut seed.substream(STREAM_DRAWS).substream(i as u64).rng(), n))
            .collect();
        let mut nearest = vec![f64::INFINITY; pool_size];
        let mut net = Vec::new();
        let mut next = 0;
        loop {
            let p = pool[next].clone();
            nearest
                .par_iter_mut()
                .zip(&pool)
                .for_each(|(d, q)| *d = d.min(dist(&p, q)));
            net.push(p);
            let (far, gap) = nearest
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
            if gap <= target {
                break;
            }
            next = far;
        }
        net
    };
    let uncovered = (0..probes)
        .into_par_iter()
        .map(|i| unit_sphere_with(&mut seed.substream(STREAM_PROBES).substream(i as u64).rng(), n))
        .find_first(|p| net.iter().all(|q| dist(p, q) > eps));
    let sudakov = eps * (net.len() as f64).ln().sqrt();
    Ok(NetReport {
        n,
        eps,
        verified: uncovered.is_none(),
        uncovered,
        probes,
        sudakov,
        net,
    })
}

// ---------------------------------------------------------------- pair sampling

/// Pair `index` of an experiment: `x` a unit cone point; `y` either `r u`
/// with `u` a unit cone point and `r` uniform on `[0, 1]`, or (when
/// `structured`) an antipodal or near-coincident injection. Never `x == y`.
fn lab_pair(cone: &ConeSpec, index: usize, seed: RngSeed, structured: bool) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed.substream(STREAM_PAIRS).substream(index as u64).rng();
    let x = cone.sample_sphere(&mut rng);
    let antipodal_ok = !matches!(cone.kind, ConeKind::CustomHalfspaces { .. });
    let kind = if structured { index % 5 } else { 0 };
    let y = match kind {
        3 if antipodal_ok => x.iter().map(|v| -v).collect(),
        4 => cone.perturb(&x, NEAR_PAIR_EPS, &mut rng),
        _ => loop {
            let u = cone.sample_sphere(&mut rng);
            let r: f64 = rng.random();
            let y: Vec<f64> = u.iter().map(|v| r * v).collect();
            if y != x {
                break y;
            }
        },
    };
    (x, y)
}

/// Two independent unit cone points.
fn unit_pair(cone: &ConeSpec, index: usize, seed: RngSeed) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed.substream(STREAM_PAIRS).substream(index as u64).rng();
    (cone.sample_sphere(&mut rng), cone.sample_sphere(&mut rng))
}

fn layer_for(cfg: &ExperimentConfig) -> Result<LayerMap> {
    Ok(LayerMap::unbiased(gaussian_matrix(cfg.m, cfg.n, cfg.seed.substream(STREAM_MATRIX))?))
}

// ---------------------------------------------------------------- expectation lemmas

/// Monte-Carlo checks of the Gaussian expectation lemmas with `cfg.m` rows
/// per pair of unit vectors, `cfg.pair_count` pairs.
pub fn mc_lemma_checks(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate_lemmas()?;
    let (alpha, beta) = (cfg.alpha, cfg.beta_param);
    let tail = (-beta * beta / 4.0).exp();
    let mut report = ExperimentReport::new("lemmas");
    for p in 0..cfg.pair_count {
        let (x, y) = unit_pair(&cfg.cone, p, cfg.seed);
        let rows_seed = cfg.seed.substream(STREAM_ROWS).substream(p as u64);
        let [e1, e2, et, lo, up] = mc_gaussian(cfg.n, cfg.m, rows_seed, |a| {
            let (ax, ay) = (dot(a, &x), dot(a, &y));
            let y2 = ay * ay;
            let small_y = ay.abs() < beta;
            [
                if ax >= 0.0 { y2 } else { 0.0 },
                if ax > 0.0 && ax <= alpha { y2 } else { 0.0 },
                if ay.abs() >= beta { y2 } else { 0.0 },
                if ax > alpha && small_y { y2 } else { 0.0 },
                if ax >= -alpha && small_y { y2 } else { 0.0 },
            ]
        });
        let pf = p as f64;
        report.rows.push(ReportRow::new("e1", 0.0).param("pair", pf).mc(e1, Some(0.5), Some(0.5)));
        report.rows.push(
            ReportRow::new("e2", 0.0)
                .param("pair", pf)
                .param("alpha", alpha)
                .mc(e2, None, Some(2.0 * alpha)),
        );
        report.rows.push(
            ReportRow::new("tail", 0.0)
                .param("pair", pf)
                .param("beta", beta)
                .mc(et, None, Some(tail)),
        );
        report.rows.push(
            ReportRow::new("truncated_lower", 0.0)
                .param("pair", pf)
                .param("alpha", alpha)
                .param("beta", beta)
                .mc(lo, Some(0.5 - 2.0 * alpha - tail), None),
        );
        report.rows.push(
            ReportRow::new("truncated_upper", 0.0)
                .param("pair", pf)
                .param("alpha", alpha)
                .param("beta", beta)
                .mc(up, None, Some(0.5 + 2.0 * alpha)),
        );
    }
    Ok(report)
}

/// Monte-Carlo mean of `(relu<a,x> - relu<a,y>)^2` against its closed form,
/// with `cfg.m` rows per pair.
pub fn expectation_identity_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate_common()?;
    if cfg.m < 2 {
        return Err(input("Monte-Carlo estimates need m >= 2 rows"));
    }
    let mut report = ExperimentReport::new("expectation");
    for p in 0..cfg.pair_count {
        let (x, y) = lab_pair(&cfg.cone, p, cfg.seed, true);
        let mut row = expectation_row(&x, &y, cfg.m, cfg.seed.substream(STREAM_ROWS).substream(p as u64))?;
        row.params.insert(0, ("pair".into(), p as f64));
        report.rows.push(row);
    }
    Ok(report)
}

/// Single-pair expectation check; `x == y` gives an exact zero.
pub fn expectation_row(x: &[f64], y: &[f64], rows: usize, seed: RngSeed) -> Result<ReportRow> {
    let exact = expected_sq_distance(x, y)?;
    let [mc] = mc_gaussian(x.len(), rows, seed, |a| {
        let d = dot(a, x).max(0.0) - dot(a, y).max(0.0);
        [d * d]
    });
    let z = if mc.se > 0.0 {
        (mc.mean - exact) / mc.se
    } else if mc.mean == exact {
        0.0
    } else {
        f64::INFINITY
    };
    let mut row = ReportRow::new("expectation", 0.0)
        .param("distance", dist(x, y))
        .mc(mc, Some(exact), Some(exact))
        .extra("exact", exact)
        .extra("z_score", z);
    row.passed = Some(z.abs() <= SE_SLACK);
    row.violation_count = usize::from(z.abs() > SE_SLACK);
    Ok(row)
}

// ---------------------------------------------------------------- band, small distances, angles

struct PairStat {
    /// `(1/m) ||relu(Ax) - relu(Ay)||^2 / ||x - y||^2`.
    ratio_sq: f64,
    phi: f64,
    large: bool,
}

/// Concentration band around `1/2 - phi` for one Gaussian layer on
/// `cfg.pair_count` cone pairs, split into large- and small-distance regimes.
pub fn theorem_band_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate_band()?;
    let layer = layer_for(cfg)?;
    let inv_m = 1.0 / cfg.m as f64;
    let stats: Vec<PairStat> = (0..cfg.pair_count.div_ceil(PAIR_BLOCK))
        .into_par_iter()
        .flat_map_iter(|blk| {
            let range = blk * PAIR_BLOCK..((blk + 1) * PAIR_BLOCK).min(cfg.pair_count);
            let pairs: Vec<_> = range.map(|p| lab_pair(&cfg.cone, p, cfg.seed, true)).collect();
            let num = layer.sq_output_distances(&pairs);
            pairs
                .into_iter()
                .zip(num)
                .map(|((x, y), num)| {
                    let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                    let large = d2.sqrt() >= cfg.c * norm(&x).max(norm(&y));
                    Ok(PairStat { ratio_sq: num * inv_m / d2, phi: phi(&x, &y)?, large })
                })
                .collect::<Vec<_>>()
        })
        .collect::<Result<_>>()?;

    let half = cfg.delta / 2.0;
    let mut report = ExperimentReport::new("band");
    for (label, filter) in [("all", None), ("large_distance", Some(true)), ("small_distance", Some(false))] {
        let sel: Vec<&PairStat> = stats.iter().filter(|s| filter.is_none_or(|f| s.large == f)).collect();
        // Deviation from the centre 1/2 - phi, in units of ||x - y||^2.
        let devs: Vec<f64> = sel.iter().map(|s| (s.ratio_sq - (0.5 - s.phi)).abs()).collect();
        let worst = devs.iter().copied().fold(0.0, f64::max);
        let violations = devs.iter().filter(|&&d| d > half).count();
        let mut row = ReportRow::new("band", worst).param("delta", cfg.delta).param("c", cfg.c);
        row.upper = Some(half);
        row.sample_count = sel.len();
        row.violation_count = violations;
        row.worst_violation = (worst - half).max(0.0);
        // Narrower bands than the pinned one are reported but not judged.
        row.passed = (cfg.delta >= BAND_PINNED_DELTA).then_some(violations == 0);
        row.extras.push(("regime".into(), match label {
            "all" => 0.0,
            "large_distance" => 1.0,
            _ => 2.0,
        }));
        row.check = format!("band_{label}");
        report.rows.push(row);
    }

    // Mean over pairs of the normalised squared distance stays inside [1/4, 1/2].
    let vals: Vec<f64> = stats.iter().map(|s| s.ratio_sq).collect();
    let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
    let est = mean_se(&vals, &sq, vals.len().max(2));
    let mut row = ReportRow::new("mean_ratio_sq", est.mean);
    row.standard_error = Some(est.se);
    row.lower = Some(0.25);
    row.upper = Some(0.5);
    row.sample_count = vals.len();
    let excess = (0.25 - est.mean).max(est.mean - 0.5);
    row.violation_count = usize::from(excess > 0.0);
    row.worst_violation = excess.max(0.0);
    row.passed = Some(excess <= 0.0);
    report.rows.push(row);
    Ok(report)
}

/// Distribution of the `m`-normalised squared ratio as `y -> x`.
pub fn small_distance_profile(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    small_distance_profile_at(cfg, &SMALL_DISTANCE_EPS)
}

pub fn small_distance_profile_at(cfg: &ExperimentConfig, eps_list: &[f64]) -> Result<ExperimentReport> {
    cfg.validate_common()?;
    if eps_list.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(input("relative offsets must be positive"));
    }
    let layer = layer_for(cfg)?;
    let inv_m = 1.0 / cfg.m as f64;
    let (lo, hi) = SMALL_DISTANCE_WINDOW;
    let mut report = ExperimentReport::new("small");
    for (e_idx, &eps) in eps_list.iter().enumerate() {
        let stream = cfg.seed.substream(STREAM_PAIRS).substream(e_idx as u64);
        let vals: Vec<f64> = (0..cfg.pair_count)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream.substream(p as u64).rng();
                let x = cfg.cone.sample_sphere(&mut rng);
                let y = cfg.cone.perturb(&x, eps, &mut rng);
                let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                layer.sq_output_distance(&x, &y) * inv_m / d2
            })
            .collect();
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        let est = mean_se(&vals, &sq, vals.len().max(2));
        let (vmin, vmax) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let outside = vals.iter().filter(|&&v| v < lo || v > hi).count();
        let mut row = ReportRow::new("small_distance", est.mean)
            .param("eps", eps)
            .extra("min", vmin)
            .extra("max", vmax);
        row.standard_error = Some(est.se);
        row.lower = Some(lo);
        row.upper = Some(hi);
        row.sample_count = vals.len();
        row.violation_count = outside;
        row.worst_violation = (lo - vmin).max(vmax - hi).max(0.0);
        row.passed = Some(outside == 0);
        report.rows.push(row);
    }
    Ok(report)
}

/// Post-activation cosine against its prediction from the input angle.
pub fn angle_preservation_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate_common()?;
    let layer = layer_for(cfg)?;
    let outcomes: Vec<Option<f64>> = (0..cfg.pair_count)
        .into_par_iter()
        .map(|p| {
            let (x, y) = unit_pair(&cfg.cone, p, cfg.seed);
            angle_deviation(&layer, &x, &y)
        })
        .collect::<Result<_>>()?;
    let devs: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let skipped = outcomes.len() - devs.len();
    let worst = devs.iter().copied().fold(0.0, f64::max);
    let over = devs.iter().filter(|&&d| d > ANGLE_TOL).count();
    let mut row = ReportRow::new("angle", worst).extra("skipped", skipped as f64);
    row.upper = Some(ANGLE_TOL);
    row.sample_count = devs.len();
    row.violation_count = over;
    row.worst_violation = (worst - ANGLE_TOL).max(0.0);
    row.passed = Some(over == 0);
    let mut report = ExperimentReport::new("angle");
    if skipped > 0 {
        report.warnings.push(format!("{skipped} pairs skipped: relu(Ax) = 0"));
    }
    report.rows.push(row);
    Ok(report)
}

/// `|cos angle(relu(Ax), relu(Ay)) - predicted|`, or `None` when either
/// output vanishes.
pub fn angle_deviation(layer: &LayerMap, x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    let fx = crate::geometry::layer_apply(layer, x)?;
    let fy = crate::geometry::layer_apply(layer, y)?;
    let (nx, ny) = (norm(&fx), norm(&fy));
    if nx == 0.0 || ny == 0.0 {
        return Ok(None);
    }
    let observed = (dot(&fx, &fy) / (nx * ny)).clamp(-1.0, 1.0);
    let predicted = predicted_cos_angle(angle_theta(x, y)?)?;
    Ok(Some((observed - predicted).abs()))
}

/// Restricted isometry of `A / sqrt(m)` on cone differences, plus a
/// chi-square sanity row over fresh matrices.
pub fn rip_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate_rip()?;
    let a = gaussian_matrix(cfg.m, cfg.n, cfg.seed.substream(STREAM_MATRIX))?;
    let inv_m = 1.0 / cfg.m as f64;
    let stat = |a: &crate::numerics::Matrix, d: &[f64]| {
        let d2 = dot(d, d);
        a.row_iter().map(|r| dot(r, d).powi(2)).sum::<f64>() * inv_m / d2
    };
    let vals: Vec<f64> = (0..cfg.pair_count)
        .into_par_iter()
        .map(|p| {
            let (x, y) = lab_pair(&cfg.cone, p, cfg.seed, true);
            let d: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u - v).collect();
            stat(&a, &d)
        })
        .collect();
    let (lo, hi) = (1.0 - cfg.delta, 1.0 + cfg.delta);
    let worst_dev = vals.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let over = vals.iter().filter(|&&v| v < lo || v > hi).count();
    let mut row = ReportRow::new("rip", worst_dev).param("delta", cfg.delta);
    row.upper = Some(cfg.delta);
    row.sample_count = vals.len();
    row.violation_count = over;
    row.worst_violation = (worst_dev - cfg.delta).max(0.0);
    row.passed = Some(over == 0);

    // For a fixed unit direction u, ||A u||^2 / m ~ chi^2(m) / m, mean 1.
    let u = cfg.cone.sample_sphere(&mut cfg.seed.substream(STREAM_FRESH).rng());
    let fresh: Vec<f64> = (0..CHI_SQUARE_MATRICES)
        .into_par_iter()
        .map(|j| {
            let s = cfg.seed.substream(STREAM_FRESH).substream(j as u64 + 1);
            gaussian_matrix(cfg.m, cfg.n, s).map(|aj| stat(&aj, &u))
        })
        .collect::<Result<_>>()?;
    let sq: Vec<f64> = fresh.iter().map(|v| v * v).collect();
    let est = mean_se(&fresh, &sq, fresh.len());
    let chi = ReportRow::new("chi_square_mean", 0.0)
        .param("matrices", CHI_SQUARE_MATRICES as f64)
        .mc(est, Some(1.0), Some(1.0))
        .extra("variance_times_m", est.se * est.se * CHI_SQUARE_MATRICES as f64 * cfg.m as f64);

    let mut report = ExperimentReport::new("rip");
    report.rows.push(row);
    report.rows.push(chi);
    Ok(report)
}

// ---------------------------------------------------------------- beta sweep

/// `beta_lo` and the `sqrt(2)` certificate for Gaussian layers of growing
/// width. Each `m` gets its own matrix substream.
pub fn beta_sweep(n: usize, m_list: &[usize], seed: RngSeed, pair_count: usize) -> Result<ExperimentReport> {
    if n == 0 || m_list.is_empty() || m_list.contains(&0) {
        return Err(input("n and every m must be positive, and m_list nonempty"));
    }
    if m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(input("m_list must be strictly increasing"));
    }
    if pair_count == 0 {
        return Err(input("pair_count must be positive"));
    }
    let mut report = ExperimentReport::new("sweep");
    for &m in m_list {
        let mseed = seed.substream(STREAM_MATRIX).substream(m as u64);
        let a = gaussian_matrix(m, n, mseed)?;
        let cert = sqrt2_certificate(&a, pair_count.min(1024), seed.substream(STREAM_CERT).substream(m as u64))?;
        let layer = LayerMap::unbiased(a);
        let b = sampled_bilip(&layer, pair_count, seed.substream(STREAM_PAIRS).substream(m as u64), true)?;
        let mut row = ReportRow::new("beta_sweep", b.beta_lo)
            .param("n", n as f64)
            .param("m", m as f64)
            .extra("u_lo", b.u_lo)
            .extra("l_hi", b.l_hi)
            .extra("cert_ratio", cert.cert_ratio);
        row.sample_count = b.sample_count;
        let ok = cert.cert_ratio >= std::f64::consts::SQRT_2 - 1e-9;
        row.violation_count = usize::from(!ok);
        row.passed = Some(ok);
        report.rows.push(row);
    }
    Ok(report)
}

/// `E ||g||` for `g ~ N(0, I_n)`, the Gaussian width of the full unit ball.
pub fn chi_mean(n: usize) -> f64 {
    // mu_1 = sqrt(2/pi) and mu_k mu_{k+1} = k.
    let mut mu = (2.0 / std::f64::consts::PI).sqrt();
    for k in 1..n {
        mu = k as f64 / mu;
    }
    mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn width_max_examples() {
        assert_eq!(ConeSpec::full(2).width_max(&[3.0, 4.0]), 5.0);
        assert_abs_diff_eq!(ConeSpec::sparse(3, 1).width_max(&[1.0, -2.0, 0.5]), 5f64.sqrt(), epsilon = 1e-15);
        let mut rng = RngSeed::new(3).rng();
        for _ in 0..20 {
            let g = gaussian_vector(&mut rng, 6);
            assert_abs_diff_eq!(ConeSpec::sparse(6, 6).width_max(&g), norm(&g), epsilon = 1e-12);
            assert_abs_diff_eq!(ConeSpec::sparse(6, 3).width_max(&g), norm(&g), epsilon = 1e-12);
        }
    }

    #[test]
    fn custom_cone_width_is_a_lower_bound() {
        let orthant = ConeSpec::halfspaces(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(orthant.width_is_lower_bound());
        let mut rng = RngSeed::new(4).rng();
        for _ in 0..20 {
            let g = gaussian_vector(&mut rng, 2);
            let w = orthant.width_max(&g);
            assert!(w <= norm(&g) + 1e-9 && w >= 0.9 * norm(&g), "w = {w}, |g| = {}", norm(&g));
        }
    }

    #[test]
    fn empty_interior_flagged() {
        let r = ConeSpec::halfspaces(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(r, Err(BilipError::EmptyInterior));
        assert!(ConeSpec::sparse(3, 4).validate().is_err());
    }

    #[test]
    fn cone_membership_and_sampling() {
        let mut rng = RngSeed::new(1).rng();
        let sparse = ConeSpec::sparse(10, 3);
        let wedge = ConeSpec::halfspaces(vec![vec![1.0, -3.0, 0.0], vec![0.2, 1.0, 0.0]]).unwrap();
        for _ in 0..200 {
            for cone in [&sparse, &wedge] {
                let x = cone.sample_sphere(&mut rng);
                assert!(cone.member(&x));
                assert!(cone.member(&x.iter().map(|v| 7.5 * v).collect::<Vec<_>>()));
                assert_abs_diff_eq!(norm(&x), 1.0, epsilon = 1e-12);
                let y = cone.perturb(&x, 1e-3, &mut rng);
                assert!(cone.member(&y));
                assert!(y != x);
            }
        }
    }

    #[test]
    fn width_mc_full_space() {
        for (n, exact) in [(1, (2.0 / PI).sqrt()), (2, (PI / 2.0).sqrt())] {
            let w = gaussian_width_mc(&ConeSpec::full(n), 20_000, RngSeed::new(n as u64)).unwrap();
            assert!((w.mean - exact).abs() <= 4.0 * w.se, "n = {n}: {w:?}");
            assert_abs_diff_eq!(chi_mean(n), exact, epsilon = 1e-15);
        }
        assert!(gaussian_width_mc(&ConeSpec::full(2), 1, RngSeed::new(0)).is_err());
        // E||g|| = sqrt(2) Gamma(2) / Gamma(3/2) = 2 sqrt(2/pi) in three dimensions.
        assert_abs_diff_eq!(chi_mean(3), 2.0 * (2.0 / PI).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn pairwise_sum_matches() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn nets_on_small_spheres() {
        let r = epsilon_net_sphere(1, 1.0, RngSeed::new(0), 100).unwrap();
        assert_eq!(r.net, vec![vec![-1.0], vec![1.0]]);
        assert!(r.verified);
        let r = epsilon_net_sphere(2, 0.1, RngSeed::new(0), 2000).unwrap();
        assert!(r.verified);
        assert!((16..=64).contains(&r.net.len()), "size {}", r.net.len());
        assert!(epsilon_net_sphere(2, 2.5, RngSeed::new(0), 1).is_err());
        assert!(epsilon_net_sphere(7, 0.5, RngSeed::new(0), 1).is_err());
    }

    #[test]
    fn expectation_row_special_pairs() {
        let x = [0.6, 0.8, 0.0];
        let same = expectation_row(&x, &x, 1000, RngSeed::new(1)).unwrap();
        assert_eq!(same.estimate, 0.0);
        assert_eq!(same.value("z_score"), Some(0.0));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let anti = expectation_row(&x, &neg, 200_000, RngSeed::new(2)).unwrap();
        assert!((anti.estimate - 1.0).abs() <= 4.0 * anti.standard_error.unwrap());
    }

    #[test]
    fn lemma_window_enforced() {
        let mut cfg = ExperimentConfig::new(4, 1000, 1);
        cfg.alpha = 1.0;
        assert!(mc_lemma_checks(&cfg).is_err());
        cfg.alpha = 0.1;
        cfg.beta_param = 9.0;
        assert!(mc_lemma_checks(&cfg).is_err());
        let mut cfg = ExperimentConfig::new(4, 100, 1);
        cfg.delta = 0.6;
        assert!(theorem_band_check(&cfg).is_err());
    }

    #[test]
    fn lemma_rows_small_run() {
        let mut cfg = ExperimentConfig::new(4, 50_000, 5);
        cfg.pair_count = 2;
        let r = mc_lemma_checks(&cfg).unwrap();
        assert_eq!(r.rows.len(), 10);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn angle_examples() {
        let layer = LayerMap::unbiased(gaussian_matrix(50, 3, RngSeed::new(1)).unwrap());
        let x = [0.0, 0.6, 0.8];
        assert_eq!(angle_deviation(&layer, &x, &x).unwrap(), Some(0.0));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        // Disjoint supports: observed cosine is exactly 0 = predicted.
        assert_eq!(angle_deviation(&layer, &x, &neg).unwrap(), Some(0.0));
    }

    #[test]
    fn reports_independent_of_threads() {
        let mut cfg = ExperimentConfig::new(5, 300, 9);
        cfg.pair_count = 200;
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| (theorem_band_check(&cfg).unwrap(), rip_check(&cfg).unwrap()))
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn narrow_band_is_informational() {
        let mut cfg = ExperimentConfig::new(4, 20, 2);
        cfg.pair_count = 200;
        cfg.delta = 0.01;
        let r = theorem_band_check(&cfg).unwrap();
        let all = &r.rows[0];
        assert!(all.violation_count > 0);
        assert_eq!(all.passed, None);
        assert!(r.passed());
    }

    #[test]
    fn sweep_rejects_unsorted() {
        assert!(beta_sweep(3, &[10, 5], RngSeed::new(0), 10).is_err());
    }
}
