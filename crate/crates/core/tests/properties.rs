//! Randomized invariants across the library.

use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spintrack::bench::iou::{intersection_area, RotatedBox};
use spintrack::bench::metrics::{precision_curve, precision_thresholds, success_curve, success_thresholds};
use spintrack::bench::rotated_iou;
use spintrack::features::{extract_features, extract_raw_features, FeatureMap};
use spintrack::imaging::{extract_patch, hann_window, magnitude_spectrum, Image};
use spintrack::logpolar::{rotation_scale_to_shift, shift_to_rotation_scale, wrap_degrees, LogPolarGrid};
use spintrack::optimizer::{
    adaptive_rate, dot, should_update, spatiotemporal_energy, steepest_step, EnergyStats, UpdateController,
};
use spintrack::rsi::regressor::rsi_loss_value;
use spintrack::rsi::{PreparedPair, RsiRegressor};
use spintrack::synth::{generate_sequence, max_scale_step, one_sided_grid, SequenceSpec, MAX_ROTATION_STEP};
use spintrack::tdd::{
    gaussian_label, predict_position, raw_response, score, tdd_loss, DiscriminativeModel, ScoreMap, TddSample,
};
use spintrack::tracker::TargetState;

fn random_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))).unwrap()
}

/// Smooth random image: a few random low-frequency cosines.
fn smooth_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(0.0..6.3)))
        .collect();
    Image::from_fn(h, w, |r, c| {
        let v: f64 = waves.iter().map(|(fy, fx, p)| (fy * r as f64 + fx * c as f64 + p).cos()).sum();
        0.5 + v / 12.0
    })
    .unwrap()
}

fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0)), 2)
}

fn arb_box() -> impl Strategy<Value = RotatedBox> {
    (-20.0..20.0f64, -20.0..20.0f64, 1.0..15.0f64, 1.0..15.0f64, -180.0..180.0f64)
        .prop_map(|(cx, cy, w, h, a)| RotatedBox::new(cx, cy, w, h, a).unwrap())
}

fn moved(b: &RotatedBox, (tx, ty): (f64, f64), deg: f64) -> RotatedBox {
    let (s, c) = deg.to_radians().sin_cos();
    RotatedBox::new(c * b.cx - s * b.cy + tx, s * b.cx + c * b.cy + ty, b.w, b.h, b.angle_deg + deg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn iou_is_symmetric_and_rigidly_invariant(a in arb_box(), b in arb_box(), tx in -50.0..50.0f64, ty in -50.0..50.0f64, deg in -180.0..180.0f64) {
        let ab = rotated_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - rotated_iou(&b, &a)).abs() <= 1e-12);
        let moved_iou = rotated_iou(&moved(&a, (tx, ty), deg), &moved(&b, (tx, ty), deg));
        prop_assert!((ab - moved_iou).abs() <= 1e-9, "{ab} vs {moved_iou}");
    }

    #[test]
    fn axis_aligned_iou_matches_closed_form(x0 in -10.0..10.0f64, y0 in -10.0..10.0f64, w0 in 1.0..10.0f64, h0 in 1.0..10.0f64,
                                            x1 in -10.0..10.0f64, y1 in -10.0..10.0f64, w1 in 1.0..10.0f64, h1 in 1.0..10.0f64) {
        let a = RotatedBox::from_xywh(x0, y0, w0, h0).unwrap();
        let b = RotatedBox::from_xywh(x1, y1, w1, h1).unwrap();
        let ix = ((x0 + w0).min(x1 + w1) - x0.max(x1)).max(0.0);
        let iy = ((y0 + h0).min(y1 + h1) - y0.max(y1)).max(0.0);
        let inter = ix * iy;
        let expected = inter / (w0 * h0 + w1 * h1 - inter);
        prop_assert!((intersection_area(&a, &b) - inter).abs() <= 1e-9);
        prop_assert!((rotated_iou(&a, &b) - expected).abs() <= 1e-12);
    }

    #[test]
    fn curves_are_monotone(errors in prop::collection::vec((0.0..60.0f64, 0.0..1.0f64), 1..40)) {
        let pred: Vec<(f64, f64)> = errors.iter().map(|(e, _)| (*e, 0.0)).collect();
        let gt = vec![(0.0, 0.0); pred.len()];
        let p = precision_curve(&pred, &gt, &precision_thresholds()).unwrap();
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
        let ious: Vec<f64> = errors.iter().map(|(_, i)| *i).collect();
        let s = success_curve(&ious, &success_thresholds());
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(p.iter().chain(&s).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn adaptive_rate_is_bounded_by_both_terms(eps in 1e-6..1e6f64, alpha_s in 1e-6..10.0f64) {
        let a = adaptive_rate(eps, alpha_s).unwrap();
        prop_assert!(a <= alpha_s && a <= 1.0 / eps);
        prop_assert_eq!(a, (1.0 / eps).min(alpha_s));
    }

    #[test]
    fn gate_is_monotone_in_energy(t in 0usize..200, eps in -10.0..10.0f64, extra in 0.0..10.0f64, eps0 in 1e-6..5.0f64) {
        let ctl = UpdateController { epsilon_0: Some(eps0), ..Default::default() };
        if should_update(t, eps, &ctl) {
            prop_assert!(should_update(t, eps + extra, &ctl));
        }
        if t % 10 != 0 {
            prop_assert!(!should_update(t, eps, &ctl));
        }
    }

    #[test]
    fn energy_is_invariant_to_affine_rescaling(seed in any::<u64>(), shift in -5.0..5.0f64, c in 0.1..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Array2::from_shape_fn((21, 23), |_| rng.random_range(-1.0..1.0));
        let peaks: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut stats = EnergyStats::new(5, 1e-12);
        let mut scaled_stats = EnergyStats::new(5, 1e-12);
        for p in &peaks {
            stats.push(*p);
            scaled_stats.push(c * p + shift);
        }
        let e = spatiotemporal_energy(&ScoreMap::new(scores.clone()), &stats).unwrap().eps;
        let e2 = spatiotemporal_energy(&ScoreMap::new(scores.mapv(|v| c * v + shift)), &scaled_stats).unwrap().eps;
        prop_assert!((e - e2).abs() <= 1e-8 * e.abs().max(1.0), "{e} vs {e2}");
    }

    #[test]
    fn steepest_step_decreases_spd_quadratics(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let a = b.t().dot(&b) + Array2::<f64>::eye(n) * 0.1;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let apply = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| a[(i, j)] * v[j]).sum()).collect() };
        let f = |v: &[f64]| 0.5 * dot(v, &apply(v));
        let g = apply(&x);
        let alpha = steepest_step(&g, apply);
        let next: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
        prop_assert!(f(&next) < f(&x));
    }

    #[test]
    fn shift_conversion_round_trips(scale in 0.5..2.0f64, deg in -179.0..179.0f64, bins in 8usize..128) {
        let grid = LogPolarGrid::for_patch(64, 64).with_bins(bins, bins);
        let (dr, dt) = rotation_scale_to_shift(scale, deg, &grid);
        let back = shift_to_rotation_scale(dr, dt, &grid);
        prop_assert!((back.scale - scale).abs() <= 1e-9 && (back.rotation_deg - deg).abs() <= 1e-9);
    }

    #[test]
    fn wrapped_angles_stay_in_half_open_range(deg in -1e4..1e4f64) {
        let w = wrap_degrees(deg);
        prop_assert!(w > -180.0 && w <= 180.0);
        prop_assert!(((deg - w) / 360.0 - ((deg - w) / 360.0).round()).abs() < 1e-9);
    }

    #[test]
    fn hann_window_is_bounded_and_symmetric(h in 2usize..40, w in 2usize..40) {
        let win = hann_window(h, w);
        for r in 0..h {
            for c in 0..w {
                let v = win[(r, c)];
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, win[(h - 1 - r, c)]);
                prop_assert_eq!(v, win[(r, w - 1 - c)]);
                if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn sample_permutation_leaves_discriminative_loss_unchanged(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = DiscriminativeModel::new(
            Array3::from_shape_fn((2, 3, 3), |_| rng.random_range(-1.0..1.0)),
            Array2::from_shape_fn((6, 7), |_| rng.random_range(0.0..1.0)),
            0.1,
        ).unwrap();
        let mut samples: Vec<TddSample> = (0..4).map(|i| TddSample {
            features: random_map(&mut rng, 2, 6, 7),
            label: gaussian_label((6, 7), (i, i + 1), 1.5).unwrap(),
        }).collect();
        let before = tdd_loss(&model, &samples).unwrap();
        samples.reverse();
        samples.swap(0, 2);
        let after = tdd_loss(&model, &samples).unwrap();
        prop_assert!((before.value - after.value).abs() <= 1e-12 * before.value.max(1.0));
        for (a, b) in before.grads.to_vec().iter().zip(after.grads.to_vec()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn peak_survives_increasing_transforms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Array2::from_shape_fn((9, 11), |_| rng.random_range(-1.0..1.0));
        let a = predict_position(&ScoreMap::new(scores.clone()));
        let b = predict_position(&ScoreMap::new(scores.mapv(|v| 2.0 * v + 1.0)));
        prop_assert_eq!(a.cell, b.cell);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batch_permutation_leaves_regressor_loss_unchanged(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reg = RsiRegressor::new(2, [0.01; 3], seed);
        let mut batch: Vec<PreparedPair> = one_sided_grid().pairs().into_iter().take(4)
            .map(|label| PreparedPair { input: random_map(&mut rng, 2, 6, 6), label })
            .collect();
        let before = rsi_loss_value(&reg, &batch).unwrap();
        batch.rotate_left(1);
        let after = rsi_loss_value(&reg, &batch).unwrap();
        prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn magnitude_spectrum_ignores_circular_shifts(seed in any::<u64>(), dy in 0usize..16, dx in 0usize..16) {
        let img = random_image(seed, 16, 20);
        let shifted = Image::from_fn(16, 20, |r, c| img.get((r + dy) % 16, (c + dx) % 20)).unwrap();
        for highpass in [false, true] {
            let a = magnitude_spectrum(&img, highpass);
            let b = magnitude_spectrum(&shifted, highpass);
            let scale = a.magnitudes().iter().fold(0.0f64, |m, v| m.max(*v));
            for (x, y) in a.magnitudes().iter().zip(b.magnitudes()) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn patch_rotation_round_trips(seed in any::<u64>(), deg in -60.0..60.0f64) {
        let img = smooth_image(seed, 96, 96);
        let state = TargetState { cx: 47.5, cy: 47.5, base_w: 48.0, base_h: 48.0, scale: 1.0, rotation_deg: deg };
        let rotated = extract_patch(&img, &state, (48, 48), 1.0).unwrap();
        let back_state = TargetState { cx: 23.5, cy: 23.5, rotation_deg: -deg, ..state };
        let back = extract_patch(&rotated, &back_state, (48, 48), 1.0).unwrap();
        let upright = extract_patch(&img, &TargetState { rotation_deg: 0.0, ..state }, (48, 48), 1.0).unwrap();
        // Compare the inscribed disc, which never leaves the rotated patch.
        let mut err = 0.0;
        let mut n = 0.0;
        for r in 0..48 {
            for c in 0..48 {
                let (y, x) = (r as f64 - 23.5, c as f64 - 23.5);
                if x * x + y * y <= 20.0 * 20.0 {
                    err += (back.get(r, c) - upright.get(r, c)).abs();
                    n += 1.0;
                }
            }
        }
        prop_assert!(err / n <= 0.05, "mean abs error {}", err / n);
    }

    #[test]
    fn raw_features_shift_with_the_patch(seed in any::<u64>(), cell in 1usize..4) {
        let img = random_image(seed, 16 * cell + cell, 16 * cell);
        let a = Image::from_fn(16 * cell, 16 * cell, |r, c| img.get(r, c)).unwrap();
        let b = Image::from_fn(16 * cell, 16 * cell, |r, c| img.get(r + cell, c)).unwrap();
        let fa = extract_raw_features(&a, cell).unwrap();
        let fb = extract_raw_features(&b, cell).unwrap();
        for ch in 0..fa.channels() {
            for r in 1..14 {
                for c in 1..15 {
                    prop_assert!((fa.values[(ch, r + 1, c)] - fb.values[(ch, r, c)]).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn standardized_channels_have_zero_mean_and_unit_variance(seed in any::<u64>()) {
        let map = extract_features(&random_image(seed, 32, 40), 2).unwrap();
        for ch in map.values.outer_iter() {
            let n = ch.len() as f64;
            let mean = ch.sum() / n;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((0.99..=1.01).contains(&var) || var == 0.0);
        }
    }

    #[test]
    fn hinge_ignores_easy_negatives(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_map(&mut rng, 2, 7, 7);
        let w = Array3::from_shape_fn((2, 3, 3), |_| rng.random_range(-1.0..1.0));
        let model = DiscriminativeModel::new(w, Array2::zeros((7, 7)), 0.0).unwrap();
        prop_assert!(score(&model, &x).unwrap().scores.iter().all(|v| *v >= 0.0));
        let raw = raw_response(&model, &x).unwrap();
        let label = gaussian_label((7, 7), (3, 3), 1.5).unwrap();
        // Relabeling cells the filter already scores negative must not move it.
        let mut relabeled = label.clone();
        for ((r, c), v) in relabeled.values.indexed_iter_mut() {
            if raw[(r, c)] <= 0.0 {
                *v = rng.random_range(0.0..1.0);
            }
        }
        let g0 = tdd_loss(&model, &[TddSample { features: x.clone(), label }]).unwrap().grads.w;
        let g1 = tdd_loss(&model, &[TddSample { features: x, label: relabeled }]).unwrap().grads.w;
        prop_assert_eq!(g0, g1);
    }

    #[test]
    fn synthetic_ground_truth_respects_motion_caps(seed in any::<u64>(), rot in 0.0..30.0f64, step in 1.0..1.1f64) {
        let mut spec = SequenceSpec::new(smooth_image(seed, 96, 96), 12);
        spec.box_w = 24.0;
        spec.box_h = 20.0;
        spec.rotation_step = rot;
        spec.scale_step = step;
        spec.seed = seed;
        let seq = generate_sequence(&spec).unwrap();
        for w in seq.truth.windows(2) {
            let dr = wrap_degrees(w[1].rotation_deg - w[0].rotation_deg).abs();
            let ds = (w[1].scale / w[0].scale).max(w[0].scale / w[1].scale);
            prop_assert!(dr <= MAX_ROTATION_STEP + 1e-9);
            prop_assert!(ds <= max_scale_step() + 1e-9);
            prop_assert!(w[1].scale > 0.0);
        }
    }
}
