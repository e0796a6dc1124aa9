use std::f64::consts::{PI, SQRT_2};

use proptest::prelude::*;

use bilip_core::estimators::{sampled_bilip, spectral_upper, sqrt2_certificate};
use bilip_core::exact::{
    enumerate_cells, exact_upper_lipschitz, lambda_of_a, line_face_patterns, pattern_sigma_max,
    pattern_sigma_min,
};
use bilip_core::geometry::{
    expected_sq_distance, pairwise_ratio, phi, psi, ramp_sqrt, smoothing_ramp, RampKind,
};
use bilip_core::numerics::{dist, dot, gaussian_matrix, singular_extremes};
use bilip_core::{LayerMap, Matrix, RngSeed};

fn vec_in(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, n)
}

fn pair_in(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_n).prop_flat_map(|n| (vec_in(n), vec_in(n)))
}

fn matrix(max_m: usize, n: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_m)
        .prop_flat_map(move |m| prop::collection::vec(-3.0..3.0f64, m * n).prop_map(move |d| (m, d)))
        .prop_map(move |(m, d)| Matrix::new(m, n, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phi_lies_in_quarter_interval((x, y) in pair_in(6)) {
        prop_assume!(x != y);
        let v = phi(&x, &y).unwrap();
        prop_assert!((0.0..=0.25 + 1e-12).contains(&v), "{v}");
        prop_assert_eq!(v, phi(&y, &x).unwrap());
    }

    /// `1/4 |x-y|^2 <= E <= 1/2 |x-y|^2`.
    #[test]
    fn expected_distance_is_sandwiched((x, y) in pair_in(6)) {
        let d2 = dist(&x, &y).powi(2);
        let e = expected_sq_distance(&x, &y).unwrap();
        prop_assert!(e >= 0.25 * d2 - 1e-12 * d2.max(1.0));
        prop_assert!(e <= 0.5 * d2 + 1e-12 * d2.max(1.0));
        prop_assume!(x != y);
        let ps = psi(&x, &y).unwrap();
        prop_assert!((e - (0.5 * d2 - ps)).abs() <= 1e-12 * d2.max(1.0));
    }

    #[test]
    fn ratio_is_bounded_by_spectral_norm(a in matrix(8, 3), (x, y) in (vec_in(3), vec_in(3))) {
        prop_assume!(x != y);
        let layer = LayerMap::unbiased(a.clone());
        let r = pairwise_ratio(&layer, &x, &y).unwrap();
        prop_assert!(r <= spectral_upper(&a) * (1.0 + 1e-12) + 1e-300);
    }

    /// Without bias the ratio ignores a common positive rescaling of the inputs.
    #[test]
    fn unbiased_ratio_is_scale_free(a in matrix(8, 3), (x, y) in (vec_in(3), vec_in(3)), t in 1e-3..1e3f64) {
        prop_assume!(x != y);
        let layer = LayerMap::unbiased(a);
        let r = pairwise_ratio(&layer, &x, &y).unwrap();
        let tx: Vec<f64> = x.iter().map(|v| v * t).collect();
        let ty: Vec<f64> = y.iter().map(|v| v * t).collect();
        let s = pairwise_ratio(&layer, &tx, &ty).unwrap();
        prop_assert!((r - s).abs() <= 1e-9 * r.max(1e-300), "{r} vs {s}");
    }

    #[test]
    fn ratio_scales_with_weights(
        a in matrix(8, 2),
        b in vec_in(8),
        (x, y) in (vec_in(2), vec_in(2)),
        c in 1e-3..1e3f64,
    ) {
        prop_assume!(x != y);
        let layer = LayerMap::new(a.clone(), b[..a.rows()].to_vec()).unwrap();
        let r = pairwise_ratio(&layer, &x, &y).unwrap();
        let s = pairwise_ratio(&layer.scaled(c), &x, &y).unwrap();
        prop_assert!((s - c * r).abs() <= 1e-12 * (c * r).max(1e-300) + 1e-300, "{s} vs {}", c * r);
    }

    #[test]
    fn certificate_never_below_sqrt2(a in matrix(12, 3), seed in any::<u64>()) {
        prop_assume!(!a.is_zero());
        let c = sqrt2_certificate(&a, 16, RngSeed::new(seed)).unwrap();
        prop_assert!(c.cert_ratio >= SQRT_2 - 1e-9, "{}", c.cert_ratio);
        prop_assert!(c.u_lb <= spectral_upper(&a) * (1.0 + 1e-12));
    }

    #[test]
    fn ramps_are_monotone_and_bounded(t1 in -30.0..30.0f64, t2 in -30.0..30.0f64, p in 0.01..12.0f64) {
        for kind in [RampKind::TailBeta, RampKind::RelaxedAlpha, RampKind::StrictAlpha] {
            let (g1, g2) = (smoothing_ramp(t1, kind, p).unwrap(), smoothing_ramp(t2, kind, p).unwrap());
            prop_assert!((0.0..=1.0).contains(&g1));
            if t1 <= t2 {
                prop_assert!(g1 <= g2);
            }
            let (h1, h2) = (ramp_sqrt(t1, kind, p).unwrap(), ramp_sqrt(t2, kind, p).unwrap());
            prop_assert!((h1 - h2).abs() <= 10.0 / p * (t1 - t2).abs() + 1e-12);
        }
    }

    #[test]
    fn singular_extremes_are_ordered(a in matrix(6, 3)) {
        let (hi, lo) = singular_extremes(&a);
        prop_assert!(lo >= 0.0 && lo <= hi * (1.0 + 1e-12));
        let fro = a.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(hi <= fro * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// No sampled ratio exceeds the exact upper constant.
    #[test]
    fn exact_upper_dominates_samples(m in 2usize..10, n in 1usize..=3, seed in any::<u64>()) {
        let a = gaussian_matrix(m, n, RngSeed::new(seed)).unwrap();
        let u = exact_upper_lipschitz(&a).unwrap();
        let b = sampled_bilip(&LayerMap::unbiased(a), 5000, RngSeed::new(seed).substream(1), true).unwrap();
        prop_assert!(b.u_lo <= u + 1e-10, "{} > {u}", b.u_lo);
    }

    /// Faces cannot lower lambda or raise the upper constant.
    #[test]
    fn faces_do_not_change_extremes(seed in any::<u64>()) {
        let a = gaussian_matrix(4, 2, RngSeed::new(seed)).unwrap();
        let lambda = lambda_of_a(&a).unwrap();
        let u = exact_upper_lipschitz(&a).unwrap() * 2.0;
        for mask in line_face_patterns(&a).unwrap() {
            if mask != 0 {
                prop_assert!(pattern_sigma_min(&a, mask) >= lambda - 1e-12);
            }
            prop_assert!(pattern_sigma_max(&a, mask) <= u * (1.0 + 1e-12));
        }
    }
}

/// Padded sigma_min of `{i : <a_i, x> >= 0}` minimised over equally spaced
/// directions, skipping the empty pattern as lambda does.
fn lambda_by_sweep(a: &Matrix, count: usize) -> f64 {
    (0..count)
        .filter_map(|k| {
            let t = 2.0 * PI * (k as f64 + 0.5) / count as f64;
            let x = [t.cos(), t.sin()];
            let mask = (0..a.rows())
                .filter(|&i| dot(a.row(i), &x) >= 0.0)
                .fold(0u32, |acc, i| acc | (1 << i));
            (mask != 0).then(|| pattern_sigma_min(a, mask))
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn lambda_matches_direction_sweep() {
    for s in 0..12 {
        let m = 2 + s % 6;
        let a = gaussian_matrix(m, 2, RngSeed::new(500 + s as u64)).unwrap();
        let lambda = lambda_of_a(&a).unwrap();
        let swept = lambda_by_sweep(&a, 100_000);
        assert!((lambda - swept).abs() <= 1e-10, "seed {s}: {lambda} vs {swept}");
    }
}

#[test]
fn planar_cells_are_found_by_sweep() {
    for s in 0..12 {
        let m = 2 + s % 8;
        let a = gaussian_matrix(m, 2, RngSeed::new(900 + s as u64)).unwrap();
        let cells = enumerate_cells(&a).unwrap();
        let mut swept: Vec<u32> = (0..20_000)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / 20_000.0;
                let x = [t.cos(), t.sin()];
                (0..m).filter(|&i| dot(a.row(i), &x) > 0.0).fold(0u32, |acc, i| acc | (1 << i))
            })
            .collect();
        swept.sort_unstable();
        swept.dedup();
        let mut found: Vec<u32> = cells.patterns.iter().map(|p| p.mask).collect();
        found.sort_unstable();
        assert_eq!(found, swept, "seed {s}");
        assert_eq!(found.len(), 2 * m);
    }
}

#[test]
fn substreams_are_distinct_and_reproducible() {
    let s = RngSeed::new(17);
    let a = gaussian_matrix(50, 4, s.substream(1)).unwrap();
    let b = gaussian_matrix(50, 4, s.substream(1)).unwrap();
    let c = gaussian_matrix(50, 4, s.substream(2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let wide = gaussian_matrix(600, 2, s).unwrap();
    let rows: Vec<usize> = (0..256).collect();
    assert_eq!(wide.select_rows(&rows).unwrap(), gaussian_matrix(256, 2, s).unwrap());
}
