//! Grayscale images, similarity-warp sampling and 2-D spectral utilities.
//!
//! Coordinates are continuous pixel-index coordinates: the center of pixel
//! `(row, col)` sits at `(x, y) = (col, row)`. Angles follow the log-polar
//! convention used across the crate: a direction at angle `t` points along
//! `(cos t, sin t)` in `(x, y)`, so rotating by `a` maps `t` to `t + a`.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fft::{fftshift, Fft2d};
use crate::tracker::TargetState;

/// Luminance image with every pixel finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array2<f64>,
}

impl Image {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidImage(format!("empty image {h}x{w}")));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Clamps every value into `[0, 1]`; non-finite values become 0.
    pub fn from_clamped(mut pixels: Array2<f64>) -> Result<Self> {
        pixels.mapv_inplace(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        Self::new(pixels)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), |(r, c)| f(r, c)))
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[(row, col)]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.mean().unwrap_or(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.pixels.std(0.0)
    }

    /// Bilinear sample at `(x, y)`; coordinates outside the image replicate
    /// the nearest edge pixel.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        sample_bilinear(&self.pixels, x, y)
    }

    /// Loads an 8-bit grayscale or RGB raster, converting RGB with
    /// `0.299 R + 0.587 G + 0.114 B`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
            let p = rgb.get_pixel(c as u32, r as u32);
            (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
        });
        Self::from_clamped(pixels)
    }

    pub fn to_gray8(&self) -> image::GrayImage {
        let (h, w) = self.dims();
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([(self.pixels[(y as usize, x as usize)] * 255.0).round() as u8])
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_gray8().save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }
}

/// Bilinear interpolation with edge replication on a raw grid.
pub fn sample_bilinear(grid: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = grid.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = grid[(y0, x0)] * (1.0 - fx) + grid[(y0, x1)] * fx;
    let bottom = grid[(y1, x0)] * (1.0 - fx) + grid[(y1, x1)] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Affine map from output pixel coordinates to source coordinates:
/// `src = origin + col_step * out_x + row_step * out_y`.
#[derive(Debug, Clone, Copy)]
pub struct SamplingFrame {
    pub origin: (f64, f64),
    pub col_step: (f64, f64),
    pub row_step: (f64, f64),
}

impl SamplingFrame {
    /// Grid centered at `center`, rotated by `rotation_deg`, with `px_x` /
    /// `px_y` source pixels per output pixel along the rotated axes.
    pub fn centered(center: (f64, f64), rotation_deg: f64, px_x: f64, px_y: f64, out: (usize, usize)) -> Self {
        let (s, c) = rotation_deg.to_radians().sin_cos();
        let col_step = (c * px_x, s * px_x);
        let row_step = (-s * px_y, c * px_y);
        let u0 = (out.1 as f64 - 1.0) / 2.0;
        let v0 = (out.0 as f64 - 1.0) / 2.0;
        let origin = (center.0 - col_step.0 * u0 - row_step.0 * v0, center.1 - col_step.1 * u0 - row_step.1 * v0);
        Self { origin, col_step, row_step }
    }

    pub fn map(&self, out_x: f64, out_y: f64) -> (f64, f64) {
        (
            self.origin.0 + self.col_step.0 * out_x + self.row_step.0 * out_y,
            self.origin.1 + self.col_step.1 * out_x + self.row_step.1 * out_y,
        )
    }
}

/// Resamples `img` through `frame` into an `out` (rows, cols) grid.
pub fn resample(img: &Image, frame: &SamplingFrame, out: (usize, usize)) -> Image {
    let pixels = Array2::from_shape_fn(out, |(r, c)| {
        let (x, y) = frame.map(c as f64, r as f64);
        img.sample(x, y)
    });
    Image { pixels }
}

/// Crops the patch around `state`: centered on the target, rotated by the
/// target rotation and scaled so that `pad_factor` times the current box
/// exactly fills `out_size` (rows, cols).
pub fn extract_patch(img: &Image, state: &TargetState, out_size: (usize, usize), pad_factor: f64) -> Result<Image> {
    state.validate()?;
    if out_size.0 < 8 || out_size.1 < 8 {
        return Err(Error::InvalidDims(format!("patch size {}x{} below 8x8", out_size.0, out_size.1)));
    }
    if !(pad_factor.is_finite() && pad_factor > 0.0) {
        return Err(Error::InvalidInput(format!("pad factor {pad_factor}")));
    }
    let px_x = pad_factor * state.base_w * state.scale / out_size.1 as f64;
    let px_y = pad_factor * state.base_h * state.scale / out_size.0 as f64;
    let frame = SamplingFrame::centered((state.cx, state.cy), state.rotation_deg, px_x, px_y, out_size);
    Ok(resample(img, &frame, out_size))
}

/// Warps `img` by a similarity transform: the point at `src_center` moves to
/// `dst_center`, content is scaled by `scale` and rotated by `rotation_deg`.
pub fn warp_similarity(
    img: &Image,
    src_center: (f64, f64),
    dst_center: (f64, f64),
    scale: f64,
    rotation_deg: f64,
    out: (usize, usize),
) -> Image {
    // out(q) = img(src + R(-a) (q - dst) / s)
    let (s, c) = rotation_deg.to_radians().sin_cos();
    let col_step = (c / scale, -s / scale);
    let row_step = (s / scale, c / scale);
    let origin = (
        src_center.0 - col_step.0 * dst_center.0 - row_step.0 * dst_center.1,
        src_center.1 - col_step.1 * dst_center.0 - row_step.1 * dst_center.1,
    );
    let frame = SamplingFrame { origin, col_step, row_step };
    resample(img, &frame, out)
}

/// Separable raised-cosine window, zero on the border and peaking at the center.
pub fn hann_window(h: usize, w: usize) -> Array2<f64> {
    let wy = hann_1d(h);
    let wx = hann_1d(w);
    Array2::from_shape_fn((h, w), |(r, c)| wy[r] * wx[c])
}

pub(crate) fn hann_1d(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    // Evaluated on the first half and mirrored so the window is exactly
    // symmetric.
    (0..n)
        .map(|i| {
            let k = i.min(n - 1 - i);
            0.5 * (1.0 - (2.0 * PI * k as f64 / (n - 1) as f64).cos())
        })
        .collect()
}

/// Zero-frequency-centered DFT magnitudes; DC sits at `(h / 2, w / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    magnitudes: Array2<f64>,
}

impl Spectrum {
    pub fn magnitudes(&self) -> &Array2<f64> {
        &self.magnitudes
    }

    pub fn into_magnitudes(self) -> Array2<f64> {
        self.magnitudes
    }

    pub fn dims(&self) -> (usize, usize) {
        self.magnitudes.dim()
    }

    pub fn dc(&self) -> f64 {
        let (h, w) = self.dims();
        self.magnitudes[(h / 2, w / 2)]
    }
}

/// Radial emphasis `H(r) = (1 - cos(pi r)) (2 - (1 - cos(pi r)))` with `r` the
/// frequency radius in cycles per pixel.
pub fn highpass_gain(fy: f64, fx: f64) -> f64 {
    let r = (fx * fx + fy * fy).sqrt().clamp(0.0, 1.0);
    let ramp = 1.0 - (PI * r).cos();
    ramp * (2.0 - ramp)
}

pub fn magnitude_spectrum(img: &Image, highpass: bool) -> Spectrum {
    let (h, w) = img.dims();
    let plan = Fft2d::new(h, w);
    spectrum_with_plan(img.pixels(), highpass, &plan)
}

pub(crate) fn spectrum_with_plan(pixels: &Array2<f64>, highpass: bool, plan: &Fft2d) -> Spectrum {
    let (h, w) = pixels.dim();
    let freq = plan.forward_real(pixels);
    let mut magnitudes = fftshift(&freq.mapv(|z| z.norm()));
    if highpass {
        for ((r, c), v) in magnitudes.indexed_iter_mut() {
            let fy = (r as f64 - (h / 2) as f64) / h as f64;
            let fx = (c as f64 - (w / 2) as f64) / w as f64;
            *v *= highpass_gain(fy, fx);
        }
    }
    Spectrum { magnitudes }
}
