//! Fourier-Mellin rotation/scale registration.
//!
//! Magnitude spectra drop the translation between two patches; resampling
//! them onto a log-polar grid turns the remaining rotation and scale into a
//! plain 2-D shift, which phase correlation recovers.

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2d;
use crate::imaging::{hann_1d, hann_window, spectrum_with_plan, Image};
use crate::logpolar::{logpolar_resample, shift_to_rotation_scale, LogPolarGrid};
use crate::peaks::{argmax, peak_to_sidelobe, refine_peak};
use crate::rsi::RotationScaleEstimate;

const MIN_SIDE: usize = 32;
const PSR_WINDOW: usize = 11;
const SIGNAL_FLOOR: f64 = 1e-9;

/// Reusable state for repeated estimates at one patch size: FFT plans, the
/// spatial window, and the log-polar spectrum of a fixed template.
pub struct AnalyticEstimator {
    dims: (usize, usize),
    grid: LogPolarGrid,
    spatial: Fft2d,
    polar: Fft2d,
    window: Array2<f64>,
    rho_window: Vec<f64>,
    template: Option<Array2<Complex64>>,
}

impl AnalyticEstimator {
    /// `grid` supplies the bin layout; its pole is moved onto the DC bin.
    pub fn new(dims: (usize, usize), grid: &LogPolarGrid) -> Result<Self> {
        let (h, w) = dims;
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::InvalidDims(format!(
                "rotation-scale estimation needs at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}"
            )));
        }
        let grid = grid.with_center(((w / 2) as f64, (h / 2) as f64));
        grid.validate()?;
        Ok(Self {
            dims,
            grid,
            spatial: Fft2d::new(h, w),
            polar: Fft2d::new(grid.n_theta, grid.n_rho),
            window: hann_window(h, w),
            rho_window: hann_1d(grid.n_rho),
            template: None,
        })
    }

    pub fn grid(&self) -> &LogPolarGrid {
        &self.grid
    }

    pub fn set_template(&mut self, template: &Image) -> Result<()> {
        self.template = Some(self.polar_spectrum(template)?);
        Ok(())
    }

    pub fn has_template(&self) -> bool {
        self.template.is_some()
    }

    /// Estimate against the stored template.
    pub fn estimate(&self, candidate: &Image) -> Result<RotationScaleEstimate> {
        let template = self.template.as_ref().ok_or_else(|| Error::Precondition("no template set".into()))?;
        let cand = self.polar_spectrum(candidate)?;
        Ok(self.correlate(template, &cand))
    }

    pub fn estimate_pair(&self, template: &Image, candidate: &Image) -> Result<RotationScaleEstimate> {
        let a = self.polar_spectrum(template)?;
        let b = self.polar_spectrum(candidate)?;
        Ok(self.correlate(&a, &b))
    }

    /// Fourier transform of the log-polar, high-passed magnitude spectrum.
    fn polar_spectrum(&self, img: &Image) -> Result<Array2<Complex64>> {
        if img.dims() != self.dims {
            return Err(Error::InvalidDims(format!("expected {:?}, got {:?}", self.dims, img.dims())));
        }
        if img.std_dev() < SIGNAL_FLOOR {
            return Err(Error::NoSignal("patch has no intensity variation".into()));
        }
        let mean = img.mean();
        let windowed = (img.pixels() - mean) * &self.window;
        let spectrum = spectrum_with_plan(&windowed, true, &self.spatial);
        let mut polar = logpolar_resample(spectrum.magnitudes(), &self.grid)?;
        // Log compression keeps a few strong bins from dominating the correlation.
        polar.mapv_inplace(f64::ln_1p);
        let mean = polar.mean().unwrap_or(0.0);
        let energy = polar.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        if energy.sqrt() < SIGNAL_FLOOR {
            return Err(Error::NoSignal("flat magnitude spectrum".into()));
        }
        for ((_, i), v) in polar.indexed_iter_mut() {
            *v = (*v - mean) * self.rho_window[i];
        }
        Ok(self.polar.forward_real(&polar))
    }

    fn correlate(&self, template: &Array2<Complex64>, candidate: &Array2<Complex64>) -> RotationScaleEstimate {
        let (n_theta, n_rho) = (self.grid.n_theta, self.grid.n_rho);
        let mut cross = Array2::from_shape_fn((n_theta, n_rho), |idx| {
            let z = candidate[idx] * template[idx].conj();
            let norm = z.norm();
            if norm > 1e-12 {
                z / norm
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        self.polar.inverse(&mut cross);
        let surface = cross.mapv(|z| z.re);

        let (row, col, _) = argmax(&surface);
        let (dy, dx) = refine_peak(&surface, row, col, true);
        let mut d_theta = signed_bin(row, n_theta) + dy;
        let d_rho = signed_bin(col, n_rho) + dx;

        // Magnitude spectra repeat every half turn.
        let half = n_theta as f64 / 2.0;
        while d_theta > half / 2.0 {
            d_theta -= half;
        }
        while d_theta <= -half / 2.0 {
            d_theta += half;
        }

        // A spectrum shrinks when the image grows, so the radial shift is negated.
        let mut est = shift_to_rotation_scale(-d_rho, d_theta, &self.grid);
        est.confidence = peak_to_sidelobe(&surface, PSR_WINDOW, 1e-12).max(0.0);
        est
    }
}

fn signed_bin(idx: usize, n: usize) -> f64 {
    if idx > n / 2 {
        idx as f64 - n as f64
    } else {
        idx as f64
    }
}

/// Rotation and scale of `candidate` relative to `template`, with the
/// rotation resolved into `(-90, 90]`.
pub fn estimate_analytic(template: &Image, candidate: &Image, grid: &LogPolarGrid) -> Result<RotationScaleEstimate> {
    if template.dims() != candidate.dims() {
        return Err(Error::InvalidDims(format!(
            "template {:?} and candidate {:?} differ",
            template.dims(),
            candidate.dims()
        )));
    }
    AnalyticEstimator::new(template.dims(), grid)?.estimate_pair(template, candidate)
}
