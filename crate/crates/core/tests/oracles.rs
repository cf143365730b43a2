//! Worked examples checked against independent brute-force computations.

mod common;

use common::fixture;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spintrack::bench::metrics::{precision_curve, precision_thresholds};
use spintrack::features::{calibrate, extract_raw_features, FeatureMap, ORIENTATION_BINS};
use spintrack::imaging::{extract_patch, warp_similarity, Image};
use spintrack::logpolar::{logpolar_warp, LogPolarGrid};
use spintrack::optimizer::{dot, spatiotemporal_energy, steepest_step, EnergyStats, SIDELOBE_WINDOW};
use spintrack::peaks::parabolic_offset;
use spintrack::rsi::estimate_analytic;
use spintrack::synth::warp_about_center;
use spintrack::tdd::{gaussian_label, ScoreMap};
use spintrack::tracker::TargetState;

fn centered_crop(img: &Image, size: usize) -> Image {
    let (h, w) = img.dims();
    let (r0, c0) = ((h - size) / 2, (w - size) / 2);
    Image::from_fn(size, size, |r, c| img.get(r0 + r, c0 + c)).unwrap()
}

fn mean_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).mean().unwrap()
}

/// Soft-edged horizontal bar centered at `(cx, cy)`.
fn bar_value(x: f64, y: f64, cx: f64, cy: f64) -> f64 {
    let inside = |d: f64, half: f64| (half + 0.5 - d.abs()).clamp(0.0, 1.0);
    inside(x - cx, 20.0) * inside(y - cy, 4.0)
}

#[test]
fn rotated_patch_of_a_bar_matches_rasterizer() {
    let (cx, cy) = (49.5, 49.5);
    let img = Image::from_fn(100, 100, |r, c| bar_value(c as f64, r as f64, cx, cy)).unwrap();
    let state = TargetState { cx, cy, base_w: 60.0, base_h: 60.0, scale: 1.0, rotation_deg: 90.0 };
    let patch = extract_patch(&img, &state, (60, 60), 1.0).unwrap();
    // Inverse map each output pixel by hand and evaluate the bar analytically.
    let oracle = Array2::from_shape_fn((60, 60), |(r, c)| {
        let (u, v) = (c as f64 - 29.5, r as f64 - 29.5);
        let (x, y) = (cx - v, cy + u);
        bar_value(x, y, cx, cy)
    });
    let err = mean_abs_diff(patch.pixels(), &oracle);
    assert!(err <= 0.05, "mean abs diff {err}");
    // The bar now runs vertically: the middle column is brighter than the middle row.
    let col: f64 = (0..60).map(|r| patch.get(r, 30)).sum();
    let row: f64 = (0..60).map(|c| patch.get(30, c)).sum();
    assert!(col > 2.0 * row);
}

#[test]
fn scaling_about_the_pole_shifts_the_rho_axis() {
    let img = centered_crop(&fixture("astronaut"), 128);
    let grid = LogPolarGrid::for_patch(128, 128);
    let scaled = warp_about_center(&img, 1.1, 0.0);
    let a = logpolar_warp(&img, &grid).unwrap().values;
    let b = logpolar_warp(&scaled, &grid).unwrap().values;
    let shift = grid.n_rho as f64 * 1.1f64.ln() / (grid.rho_max / grid.rho_min).ln();
    // Oracle: sample the original warp at rho index i - shift.
    let (n_theta, n_rho) = a.dim();
    let mut err = 0.0;
    let mut count = 0.0;
    for j in 0..n_theta {
        for i in 0..n_rho {
            let src = i as f64 - shift;
            if src < 0.0 || src > (n_rho - 1) as f64 {
                continue;
            }
            let (lo, f) = (src.floor() as usize, src - src.floor());
            let hi = (lo + 1).min(n_rho - 1);
            let expected = a[(j, lo)] * (1.0 - f) + a[(j, hi)] * f;
            err += (b[(j, i)] - expected).abs();
            count += 1.0;
        }
    }
    assert!(err / count <= 0.05, "mean abs diff {}", err / count);
}

#[test]
fn analytic_estimate_recovers_a_known_warp() {
    for name in ["astronaut", "camera", "coffee"] {
        let img = centered_crop(&fixture(name), 128);
        let grid = LogPolarGrid::for_spectrum(128, 128);
        let cand = warp_about_center(&img, 1.21, 12.0);
        let est = estimate_analytic(&img, &cand, &grid).unwrap();
        assert!((est.scale / 1.21 - 1.0).abs() <= 0.03, "{name}: scale {}", est.scale);
        assert!((est.rotation_deg - 12.0).abs() <= 2.0, "{name}: rotation {}", est.rotation_deg);
    }
}

#[test]
fn half_turn_ambiguity_folds_into_the_small_angle() {
    let img = centered_crop(&fixture("astronaut"), 128);
    let grid = LogPolarGrid::for_spectrum(128, 128);
    let est = estimate_analytic(&img, &warp_about_center(&img, 1.0, 150.0), &grid).unwrap();
    assert!((est.rotation_deg + 30.0).abs() <= 2.0, "rotation {}", est.rotation_deg);
}

#[test]
fn analytic_estimates_are_inverse_consistent() {
    let img = centered_crop(&fixture("camera"), 128);
    let grid = LogPolarGrid::for_spectrum(128, 128);
    for (s, a) in [(1.1, 9.0), (0.83, -21.0), (1.46, 27.0)] {
        let warped = warp_about_center(&img, s, a);
        let fwd = estimate_analytic(&img, &warped, &grid).unwrap();
        let back = estimate_analytic(&warped, &img, &grid).unwrap();
        let product = fwd.scale * back.scale;
        assert!((1.0 / 1.02..=1.02).contains(&product), "scale product {product}");
        assert!((fwd.rotation_deg + back.rotation_deg).abs() <= 1.0);
    }
}

#[test]
fn quarter_turn_permutes_orientation_bins() {
    let img = centered_crop(&fixture("coffee"), 64);
    let rotated = Image::from_fn(64, 64, |r, c| img.get(c, 63 - r)).unwrap();
    let a = extract_raw_features(&img, 64).unwrap();
    let b = extract_raw_features(&rotated, 64).unwrap();
    let shift = ORIENTATION_BINS / 2;
    let total: f64 = (0..ORIENTATION_BINS).map(|k| a.values[(3 + k, 0, 0)]).sum();
    for k in 0..ORIENTATION_BINS {
        let moved = b.values[(3 + (k + shift) % ORIENTATION_BINS, 0, 0)];
        let diff = (a.values[(3 + k, 0, 0)] - moved).abs() / total;
        assert!(diff <= 0.05, "bin {k}: {diff}");
    }
}

#[test]
fn calibration_is_a_per_cell_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let map = FeatureMap::new(Array3::from_shape_fn((5, 4, 6), |_| rng.random_range(-1.0..1.0)), 2);
    let adapter = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0..1.0));
    let out = calibrate(&map, &adapter).unwrap();
    for r in 0..4 {
        for c in 0..6 {
            for o in 0..3 {
                let expected: f64 = (0..5).map(|i| adapter[(o, i)] * map.values[(i, r, c)]).sum();
                assert!((out.values[(o, r, c)] - expected).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn gaussian_label_mass_matches_the_integral() {
    let label = gaussian_label((31, 31), (15, 15), 2.0).unwrap();
    let mass = label.values.sum();
    let integral = 2.0 * std::f64::consts::PI * 4.0;
    assert!((mass / integral - 1.0).abs() <= 0.01, "{mass}");
}

#[test]
fn parabolic_offset_matches_closed_form() {
    let (a, b, c) = (0.5, 1.0, 0.9);
    let vertex = (a - c) / (2.0 * (a - 2.0 * b + c));
    assert!((parabolic_offset(a, b, c) - vertex).abs() <= 1e-12);
    assert!((vertex - 1.0 / 3.0).abs() <= 1e-12);
}

#[test]
fn spatial_energy_factor_is_the_peak_to_sidelobe_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let scores = Array2::from_shape_fn((25, 30), |_| rng.random_range(-1.0..1.0));
        let smap = ScoreMap::new(scores.clone());
        let (pr, pc, peak) = smap.peak;
        let half = (SIDELOBE_WINDOW / 2) as isize;
        let side: Vec<f64> = scores
            .indexed_iter()
            .filter(|((r, c), _)| (*r as isize - pr as isize).abs() > half || (*c as isize - pc as isize).abs() > half)
            .map(|(_, v)| *v)
            .collect();
        let mean = side.iter().sum::<f64>() / side.len() as f64;
        let std = (side.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / side.len() as f64).sqrt();
        let mut stats = EnergyStats::new(5, 1e-6);
        stats.push(peak - 1.0);
        stats.push(peak - 2.0);
        let e = spatiotemporal_energy(&smap, &stats).unwrap();
        let psr = (peak - mean) / std;
        assert!((e.spatial(1e-6) - psr).abs() <= 1e-9 * psr.abs(), "{} vs {psr}", e.spatial(1e-6));
    }
}

#[test]
fn steepest_step_is_the_exact_line_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let b = Array2::from_shape_fn((5, 5), |_| rng.random_range(-1.0..1.0));
        let a = b.t().dot(&b) + Array2::<f64>::eye(5) * 0.1;
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let apply = |v: &[f64]| -> Vec<f64> { (0..5).map(|i| (0..5).map(|j| a[(i, j)] * v[j]).sum()).collect() };
        let g = apply(&x);
        let alpha = steepest_step(&g, apply);
        let next: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
        let g_next = apply(&next);
        assert!(dot(&g_next, &g).abs() <= 1e-9 * dot(&g, &g).max(1.0));
    }
}

#[test]
fn precision_curve_matches_direct_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pred: Vec<(f64, f64)> =
        (0..50).map(|_| (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0))).collect();
    let gt: Vec<(f64, f64)> = (0..50).map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))).collect();
    let thresholds = precision_thresholds();
    let curve = precision_curve(&pred, &gt, &thresholds).unwrap();
    for (t, p) in thresholds.iter().zip(curve) {
        let hits =
            pred.iter().zip(&gt).filter(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() <= *t).count();
        assert_eq!(p, hits as f64 / 50.0);
    }
}

#[test]
fn similarity_warp_moves_the_source_point() {
    let img = fixture("brick");
    let out = warp_similarity(&img, (100.0, 120.0), (30.0, 40.0), 1.3, 17.0, (80, 80));
    assert!((out.get(40, 30) - img.get(120, 100)).abs() <= 1e-12);
}
