//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spintrack::features::FeatureMap;
use spintrack::imaging::Image;
use spintrack::rsi::{PreparedPair, RsiRegressor};
use spintrack::tdd::{correlate, gaussian_label, DiscriminativeModel, TddSample};

pub fn fixture(name: &str) -> Image {
    Image::load(format!("{}/tests/fixtures/{name}.png", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub const REL_TOL: f64 = 1e-4;

pub fn random_map(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0)), 2)
}

pub fn central_difference(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            probe[i] = params[i] + h;
            let plus = f(&probe);
            probe[i] = params[i] - h;
            let minus = f(&probe);
            probe[i] = params[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest per-coordinate relative error. Coordinates far below the
/// gradient's largest entry are measured against a thousandth of it.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(1e-12f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

pub fn random_regressor_instance(seed: u64) -> (RsiRegressor, Vec<PreparedPair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = rng.random_range(1..=3);
    let lambda = [rng.random_range(0.0..0.1), rng.random_range(0.0..0.1), rng.random_range(0.0..0.1)];
    let mut reg = RsiRegressor::new(channels, lambda, seed);
    let params: Vec<f64> = reg.params().iter().map(|p| p + rng.random_range(-0.05..0.05)).collect();
    reg.set_params(&params);
    let batch = (0..rng.random_range(1..=3))
        .map(|_| {
            let h = rng.random_range(5..=8);
            let w = rng.random_range(5..=8);
            let mut scale = rng.random_range(0.7..1.4);
            if (scale - 1.0f64).abs() < 0.02 {
                scale = 1.1;
            }
            let deg = rng.random_range(3.0..30.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            PreparedPair { input: random_map(&mut rng, channels, h, w), label: (scale, deg) }
        })
        .collect();
    (reg, batch)
}

pub fn random_tdd_instance(seed: u64) -> (DiscriminativeModel, Vec<TddSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    loop {
        let c = rng.random_range(1..=3);
        let h = rng.random_range(5..=8);
        let w = rng.random_range(5..=8);
        let k = 2 * rng.random_range(0..=1) + 1;
        let filter = Array3::from_shape_fn((c, k, k), |_| rng.random_range(-1.0..1.0));
        let mask = Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0));
        let model = DiscriminativeModel::new(filter, mask, rng.random_range(0.01..0.5)).unwrap();
        let samples: Vec<TddSample> = (0..rng.random_range(1..=3))
            .map(|_| {
                let center = (rng.random_range(0..h), rng.random_range(0..w));
                TddSample {
                    features: random_map(&mut rng, c, h, w),
                    label: gaussian_label((h, w), center, rng.random_range(0.5..2.0)).unwrap(),
                }
            })
            .collect();
        // Cells sitting on the hinge have no derivative; draw again.
        let on_hinge = samples.iter().any(|s| correlate(&s.features.values, &model.w).iter().any(|r| r.abs() < 1e-6));
        if !on_hinge {
            return (model, samples);
        }
    }
}
