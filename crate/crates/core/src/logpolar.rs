//! Cartesian to log-polar resampling.
//!
//! Rows of a [`LogPolarPatch`] index angle, columns index log-radius, so a
//! rotation about the pole becomes a circular row shift and a scaling becomes
//! a column shift.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::imaging::{sample_bilinear, Image};
use crate::rsi::RotationScaleEstimate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPolarGrid {
    pub n_rho: usize,
    pub n_theta: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Pole `(x, y)` in pixel-index coordinates.
    pub center: (f64, f64),
}

impl LogPolarGrid {
    pub fn new(n_rho: usize, n_theta: usize, rho_min: f64, rho_max: f64, center: (f64, f64)) -> Result<Self> {
        let grid = Self { n_rho, n_theta, rho_min, rho_max, center };
        grid.validate()?;
        Ok(grid)
    }

    /// 64 x 64 bins from 1 px out to the inscribed circle of an `h x w` patch,
    /// centered on the patch.
    pub fn for_patch(h: usize, w: usize) -> Self {
        Self {
            n_rho: 64,
            n_theta: 64,
            rho_min: 1.0,
            rho_max: 0.5 * h.min(w) as f64,
            center: ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
        }
    }

    /// Same bin layout, centered on the DC bin of an `h x w` centered spectrum.
    pub fn for_spectrum(h: usize, w: usize) -> Self {
        Self { center: ((w / 2) as f64, (h / 2) as f64), ..Self::for_patch(h, w) }
    }

    pub fn with_bins(self, n_rho: usize, n_theta: usize) -> Self {
        Self { n_rho, n_theta, ..self }
    }

    pub fn with_center(self, center: (f64, f64)) -> Self {
        Self { center, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rho < 8 || self.n_theta < 8 {
            return Err(Error::InvalidGrid(format!(
                "need at least 8 bins per axis, got {} x {}",
                self.n_rho, self.n_theta
            )));
        }
        if !(self.rho_min > 0.0 && self.rho_max > self.rho_min && self.rho_max.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "radius bounds must satisfy 0 < rho_min < rho_max, got {} and {}",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.center.0.is_finite() && self.center.1.is_finite()) {
            return Err(Error::InvalidGrid("non-finite center".into()));
        }
        Ok(())
    }

    /// Log-radius increment per column.
    pub fn rho_step(&self) -> f64 {
        (self.rho_max / self.rho_min).ln() / self.n_rho as f64
    }

    pub fn theta_step_deg(&self) -> f64 {
        360.0 / self.n_theta as f64
    }

    pub fn radius(&self, i: usize) -> f64 {
        (self.rho_min.ln() + i as f64 * self.rho_step()).exp()
    }

    pub fn angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_theta as f64
    }
}

/// Log-polar resampling of an image: `values[(theta, rho)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPolarPatch {
    pub grid: LogPolarGrid,
    pub values: Array2<f64>,
}

impl LogPolarPatch {
    pub fn as_image(&self) -> Image {
        Image::from_clamped(self.values.clone()).expect("log-polar values are in range")
    }
}

pub fn logpolar_warp(img: &Image, grid: &LogPolarGrid) -> Result<LogPolarPatch> {
    let values = logpolar_resample(img.pixels(), grid)?;
    Ok(LogPolarPatch { grid: *grid, values })
}

/// Log-polar resampling of an arbitrary real grid (e.g. a magnitude spectrum).
pub fn logpolar_resample(src: &Array2<f64>, grid: &LogPolarGrid) -> Result<Array2<f64>> {
    grid.validate()?;
    let (h, w) = src.dim();
    let (cx, cy) = grid.center;
    if cx < 0.0 || cy < 0.0 || cx > (w - 1) as f64 || cy > (h - 1) as f64 {
        return Err(Error::InvalidGrid(format!("center ({cx}, {cy}) outside {h}x{w} image")));
    }
    let radii: Vec<f64> = (0..grid.n_rho).map(|i| grid.radius(i)).collect();
    let mut out = Array2::zeros((grid.n_theta, grid.n_rho));
    for j in 0..grid.n_theta {
        let (s, c) = grid.angle(j).sin_cos();
        for (i, &rad) in radii.iter().enumerate() {
            out[(j, i)] = sample_bilinear(src, cx + rad * c, cy + rad * s);
        }
    }
    Ok(out)
}

pub fn wrap_degrees(deg: f64) -> f64 {
    let mut d = deg % 360.0;
    if d <= -180.0 {
        d += 360.0;
    } else if d > 180.0 {
        d -= 360.0;
    }
    d
}

/// Converts a log-polar displacement in bins into a rotation and scale.
/// `confidence` is left at zero for the caller to fill in.
pub fn shift_to_rotation_scale(d_rho: f64, d_theta: f64, grid: &LogPolarGrid) -> RotationScaleEstimate {
    RotationScaleEstimate {
        scale: (d_rho * grid.rho_step()).exp(),
        rotation_deg: wrap_degrees(d_theta * grid.theta_step_deg()),
        confidence: 0.0,
    }
}

/// Inverse of [`shift_to_rotation_scale`]: `(d_rho, d_theta)` in bins.
pub fn rotation_scale_to_shift(scale: f64, rotation_deg: f64, grid: &LogPolarGrid) -> (f64, f64) {
    (scale.ln() / grid.rho_step(), wrap_degrees(rotation_deg) / grid.theta_step_deg())
}
