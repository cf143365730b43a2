//! Lightweight shared feature extraction.
//!
//! Each `cell_size x cell_size` block of a patch yields nine channels: mean
//! luminance, mean absolute horizontal and vertical gradient, and a six-bin
//! unsigned orientation histogram. A per-branch 1x1 channel mixing matrix
//! ([`calibrate`]) adapts the shared map to each consumer.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const NUM_CHANNELS: usize = 9;
pub const ORIENTATION_BINS: usize = 6;
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Channel-major feature grid: `values[(channel, row, col)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Array3<f64>,
    pub cell_size: usize,
}

impl FeatureMap {
    pub fn new(values: Array3<f64>, cell_size: usize) -> Self {
        Self { values, cell_size }
    }

    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn height(&self) -> usize {
        self.values.dim().1
    }

    pub fn width(&self) -> usize {
        self.values.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    /// Stacks the channels of `self` on top of `other`.
    pub fn concat(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.height() != other.height() || self.width() != other.width() {
            return Err(Error::InvalidDims(format!("cannot stack {:?} with {:?}", self.dims(), other.dims())));
        }
        let values =
            ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()]).expect("matching spatial dims");
        Ok(FeatureMap::new(values, self.cell_size))
    }
}

/// Standardized nine-channel features of `patch`.
pub fn extract_features(patch: &Image, cell_size: usize) -> Result<FeatureMap> {
    let mut map = extract_raw_features(patch, cell_size)?;
    standardize(&mut map.values);
    Ok(map)
}

/// Per-cell features before channel standardization.
pub fn extract_raw_features(patch: &Image, cell_size: usize) -> Result<FeatureMap> {
    let (h, w) = patch.dims();
    if cell_size == 0 || h % cell_size != 0 || w % cell_size != 0 {
        return Err(Error::InvalidDims(format!("{h}x{w} patch is not divisible into {cell_size}-pixel cells")));
    }
    let (rows, cols) = (h / cell_size, w / cell_size);
    let px = patch.pixels();
    let mut values = Array3::zeros((NUM_CHANNELS, rows, cols));
    let bin_width = PI / ORIENTATION_BINS as f64;
    let norm = 1.0 / (cell_size * cell_size) as f64;

    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = 0.5 * (px[(y, xp)] - px[(y, xm)]);
            let gy = 0.5 * (px[(yp, x)] - px[(ym, x)]);
            let (r, c) = (y / cell_size, x / cell_size);
            values[(0, r, c)] += px[(y, x)] * norm;
            values[(1, r, c)] += gx.abs() * norm;
            values[(2, r, c)] += gy.abs() * norm;

            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            // Unsigned orientation in [0, pi), soft-assigned between the two
            // nearest bin centers at (k + 0.5) * pi / 6.
            let theta = gy.atan2(gx).rem_euclid(PI);
            let pos = theta / bin_width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = (lo as isize).rem_euclid(ORIENTATION_BINS as isize) as usize;
            let hi = (lo + 1) % ORIENTATION_BINS;
            values[(3 + lo, r, c)] += mag * (1.0 - frac) * norm;
            values[(3 + hi, r, c)] += mag * frac * norm;
        }
    }
    Ok(FeatureMap::new(values, cell_size))
}

/// Zero mean, unit variance per channel; variances below the floor are
/// replaced by the floor.
pub fn standardize(values: &mut Array3<f64>) {
    for mut channel in values.outer_iter_mut() {
        let n = channel.len() as f64;
        let mean = channel.sum() / n;
        let var = channel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
        channel.mapv_inplace(|v| (v - mean) * inv);
    }
}

/// Per-cell channel mixing: `out[:, r, c] = adapter * map[:, r, c]`.
pub fn calibrate(map: &FeatureMap, adapter: &Array2<f64>) -> Result<FeatureMap> {
    let (channels, rows, cols) = map.dims();
    if adapter.ncols() != channels {
        return Err(Error::InvalidDims(format!("adapter takes {} channels, map has {channels}", adapter.ncols())));
    }
    let flat = map.values.to_shape((channels, rows * cols)).expect("contiguous feature map");
    let mixed = adapter.dot(&flat);
    let values = mixed.into_shape_with_order((adapter.nrows(), rows, cols)).expect("shape preserved");
    Ok(FeatureMap::new(values, map.cell_size))
}
