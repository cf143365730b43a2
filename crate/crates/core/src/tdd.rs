//! Target-distractor discrimination.
//!
//! A linear filter bank `w` is correlated with a feature map to give a raw
//! response `r`. The score blends the raw and rectified response through a
//! learnable mask `m`:
//!
//! ```text
//! s = m * r + (1 - m) * max(0, r)
//! ```
//!
//! so where `m` is 0 confidently negative background cells produce neither
//! score nor gradient. The loss is the mean squared score-label error plus
//! `||gamma * w||^2`.

use ndarray::{Array2, Array3, Zip};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::peaks::{argmax, refine_peak};

/// Gaussian regression target peaking at the annotated center cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub values: Array2<f64>,
    pub center: (usize, usize),
}

pub fn gaussian_label(dims: (usize, usize), center: (usize, usize), sigma: f64) -> Result<LabelMap> {
    if center.0 >= dims.0 || center.1 >= dims.1 {
        return Err(Error::InvalidInput(format!("label center {center:?} outside {dims:?}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("label sigma {sigma}")));
    }
    let denom = 2.0 * sigma * sigma;
    let values = Array2::from_shape_fn(dims, |(r, c)| {
        let dr = r as f64 - center.0 as f64;
        let dc = c as f64 - center.1 as f64;
        (-(dr * dr + dc * dc) / denom).exp()
    });
    Ok(LabelMap { values, center })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeModel {
    /// Filter bank `(channels, kh, kw)`; both kernel sides are odd.
    pub w: Array3<f64>,
    /// Score mask over the score map, entries in `[0, 1]`.
    pub mask: Array2<f64>,
    pub gamma: f64,
}

impl DiscriminativeModel {
    pub fn new(w: Array3<f64>, mask: Array2<f64>, gamma: f64) -> Result<Self> {
        let (_, kh, kw) = w.dim();
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidDims(format!("filter {kh}x{kw} must have odd sides")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite filter".into()));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma {gamma}")));
        }
        let mut model = Self { w, mask, gamma };
        model.clamp();
        Ok(model)
    }

    /// Matched-filter start: the target-centered window of `x`, normalized so
    /// the response at the center is 1. The mask is a Gaussian bump of width
    /// `mask_sigma` around `center`.
    pub fn from_template(
        x: &FeatureMap,
        center: (usize, usize),
        kernel: (usize, usize),
        mask_sigma: f64,
        gamma: f64,
    ) -> Result<Self> {
        let (channels, h, w) = x.dims();
        let (kh, kw) = kernel;
        let (hy, hx) = (kh as isize / 2, kw as isize / 2);
        let mut filter = Array3::zeros((channels, kh, kw));
        for c in 0..channels {
            for dy in 0..kh {
                for dx in 0..kw {
                    let y = center.0 as isize + dy as isize - hy;
                    let xx = center.1 as isize + dx as isize - hx;
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                        filter[(c, dy, dx)] = x.values[(c, y as usize, xx as usize)];
                    }
                }
            }
        }
        let energy: f64 = filter.iter().map(|v| v * v).sum();
        if energy > 0.0 {
            filter.mapv_inplace(|v| v / energy);
        }
        let mask = gaussian_label((h, w), center, mask_sigma)?.values;
        Self::new(filter, mask, gamma)
    }

    pub fn clamp(&mut self) {
        self.mask.mapv_inplace(|v| v.clamp(0.0, 1.0));
        self.gamma = self.gamma.max(0.0);
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.mask.len() + 1
    }

    /// Flattened parameters `[w, mask, gamma]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.w.iter());
        out.extend(self.mask.iter());
        out.push(self.gamma);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter length");
        let (nw, nm) = (self.w.len(), self.mask.len());
        self.w.iter_mut().zip(&params[..nw]).for_each(|(d, s)| *d = *s);
        self.mask.iter_mut().zip(&params[nw..nw + nm]).for_each(|(d, s)| *d = *s);
        self.gamma = params[nw + nm];
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.w.dim().0 {
            return Err(Error::InvalidDims(format!(
                "filter has {} channels, features have {}",
                self.w.dim().0,
                x.channels()
            )));
        }
        if (x.height(), x.width()) != self.mask.dim() {
            return Err(Error::InvalidDims(format!(
                "mask {:?} does not cover a {}x{} feature map",
                self.mask.dim(),
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }
}

/// Same-size correlation of `x` with `w`, zero-padded borders.
pub fn correlate(x: &Array3<f64>, w: &Array3<f64>) -> Array2<f64> {
    let (channels, h, wd) = x.dim();
    let (_, kh, kw) = w.dim();
    let (hy, hx) = (kh / 2, kw / 2);
    let mut out = Array2::zeros((h, wd));
    for c in 0..channels {
        for dy in 0..kh {
            for dx in 0..kw {
                let weight = w[(c, dy, dx)];
                if weight == 0.0 {
                    continue;
                }
                // out(p) += weight * x(p + d - half)
                let (r0, r1) = valid_range(h, dy, hy);
                let (c0, c1) = valid_range(wd, dx, hx);
                for r in r0..r1 {
                    let sr = r + dy - hy;
                    for col in c0..c1 {
                        out[(r, col)] += weight * x[(c, sr, col + dx - hx)];
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `sum(g * correlate(x, w))` with respect to `w`.
fn correlate_filter_grad(x: &Array3<f64>, g: &Array2<f64>, kernel: (usize, usize)) -> Array3<f64> {
    let (channels, h, wd) = x.dim();
    let (kh, kw) = kernel;
    let (hy, hx) = (kh / 2, kw / 2);
    let mut out = Array3::zeros((channels, kh, kw));
    for c in 0..channels {
        for dy in 0..kh {
            for dx in 0..kw {
                let (r0, r1) = valid_range(h, dy, hy);
                let (c0, c1) = valid_range(wd, dx, hx);
                let mut acc = 0.0;
                for r in r0..r1 {
                    let sr = r + dy - hy;
                    for col in c0..c1 {
                        acc += g[(r, col)] * x[(c, sr, col + dx - hx)];
                    }
                }
                out[(c, dy, dx)] = acc;
            }
        }
    }
    out
}

/// Output rows `r` for which `r + d - half` is inside `[0, len)`.
fn valid_range(len: usize, d: usize, half: usize) -> (usize, usize) {
    let start = half.saturating_sub(d);
    let end = (len + half).saturating_sub(d).min(len);
    (start, end.max(start))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub scores: Array2<f64>,
    /// `(row, col, value)` of the maximum, first occurrence in row-major order.
    pub peak: (usize, usize, f64),
}

impl ScoreMap {
    pub fn new(scores: Array2<f64>) -> Self {
        let peak = argmax(&scores);
        Self { scores, peak }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.scores.dim()
    }
}

fn blend(mask: &Array2<f64>, raw: &Array2<f64>) -> Array2<f64> {
    Zip::from(mask).and(raw).map_collect(|&m, &r| m * r + (1.0 - m) * r.max(0.0))
}

pub fn score(model: &DiscriminativeModel, x: &FeatureMap) -> Result<ScoreMap> {
    model.check_input(x)?;
    let raw = correlate(&x.values, &model.w);
    Ok(ScoreMap::new(blend(&model.mask, &raw)))
}

/// Raw linear response `x * w` without the mask.
pub fn raw_response(model: &DiscriminativeModel, x: &FeatureMap) -> Result<Array2<f64>> {
    model.check_input(x)?;
    Ok(correlate(&x.values, &model.w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TddGrads {
    pub w: Array3<f64>,
    pub mask: Array2<f64>,
    pub gamma: f64,
}

impl TddGrads {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w.len() + self.mask.len() + 1);
        out.extend(self.w.iter());
        out.extend(self.mask.iter());
        out.push(self.gamma);
        out
    }
}

#[derive(Debug, Clone)]
pub struct TddLoss {
    pub value: f64,
    pub grads: TddGrads,
}

/// One training example: features and their regression target.
#[derive(Debug, Clone)]
pub struct TddSample {
    pub features: FeatureMap,
    pub label: LabelMap,
}

pub fn tdd_loss(model: &DiscriminativeModel, samples: &[TddSample]) -> Result<TddLoss> {
    let problem = TddProblem::new(model, samples)?;
    Ok(problem.loss())
}

/// The discriminative loss written as a least-squares problem: residuals
/// `(s_i - y_i) / sqrt(N)` for every sample and `gamma * w` for the
/// regularizer, so that `L = ||e||^2`. Exposes the Jacobian products needed
/// for Gauss-Newton curvature.
pub struct TddProblem<'a> {
    model: &'a DiscriminativeModel,
    samples: &'a [TddSample],
    raw: Vec<Array2<f64>>,
}

impl<'a> TddProblem<'a> {
    pub fn new(model: &'a DiscriminativeModel, samples: &'a [TddSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("discriminative loss needs samples".into()));
        }
        let mut raw = Vec::with_capacity(samples.len());
        for s in samples {
            model.check_input(&s.features)?;
            if s.label.values.dim() != model.mask.dim() {
                return Err(Error::InvalidDims(format!(
                    "label {:?} vs score map {:?}",
                    s.label.values.dim(),
                    model.mask.dim()
                )));
            }
            raw.push(correlate(&s.features.values, &model.w));
        }
        Ok(Self { model, samples, raw })
    }

    fn inv_sqrt_n(&self) -> f64 {
        1.0 / (self.samples.len() as f64).sqrt()
    }

    /// Score residuals per sample (already divided by `sqrt(N)`) and the
    /// regularizer residual.
    pub fn residuals(&self) -> (Vec<Array2<f64>>, Array3<f64>) {
        let k = self.inv_sqrt_n();
        let scores = self
            .raw
            .iter()
            .zip(self.samples)
            .map(|(r, s)| (blend(&self.model.mask, r) - &s.label.values) * k)
            .collect();
        (scores, &self.model.w * self.model.gamma)
    }

    pub fn loss(&self) -> TddLoss {
        let (score_res, reg_res) = self.residuals();
        let value = score_res.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
            + reg_res.iter().map(|v| v * v).sum::<f64>();
        let mut grads = self.vjp(&score_res, &reg_res);
        grads.w *= 2.0;
        grads.mask *= 2.0;
        grads.gamma *= 2.0;
        TddLoss { value, grads }
    }

    /// Jacobian-vector product of the residual vector along `v`.
    pub fn jvp(&self, v: &TddGrads) -> (Vec<Array2<f64>>, Array3<f64>) {
        let k = self.inv_sqrt_n();
        let mask = &self.model.mask;
        let scores = self
            .raw
            .iter()
            .zip(self.samples)
            .map(|(r, s)| {
                let dr = correlate(&s.features.values, &v.w);
                let mut out = Array2::zeros(r.dim());
                Zip::from(&mut out).and(r).and(&dr).and(mask).and(&v.mask).for_each(|o, &r, &dr, &m, &dm| {
                    let slope = if r > 0.0 { 1.0 } else { m };
                    *o = (dm * r.min(0.0) + slope * dr) * k;
                });
                out
            })
            .collect();
        let reg = &self.model.w * v.gamma + &v.w * self.model.gamma;
        (scores, reg)
    }

    /// Transposed Jacobian applied to a residual-space vector.
    pub fn vjp(&self, score_part: &[Array2<f64>], reg_part: &Array3<f64>) -> TddGrads {
        let k = self.inv_sqrt_n();
        let mask = &self.model.mask;
        let kernel = (self.model.w.dim().1, self.model.w.dim().2);
        let mut gw = reg_part * self.model.gamma;
        let mut gm = Array2::zeros(mask.dim());
        for ((r, s), u) in self.raw.iter().zip(self.samples).zip(score_part) {
            let mut g_raw = Array2::zeros(r.dim());
            Zip::from(&mut g_raw).and(&mut gm).and(r).and(u).and(mask).for_each(|gr, gm, &r, &u, &m| {
                let slope = if r > 0.0 { 1.0 } else { m };
                *gr = u * k * slope;
                *gm += u * k * r.min(0.0);
            });
            gw += &correlate_filter_grad(&s.features.values, &g_raw, kernel);
        }
        let gamma = Zip::from(reg_part).and(&self.model.w).fold(0.0, |acc, &u, &w| acc + u * w);
        TddGrads { w: gw, mask: gm, gamma }
    }

    /// `||J v||^2`; the Gauss-Newton curvature of `L` along `v` is twice this.
    pub fn jvp_norm_sq(&self, v: &TddGrads) -> f64 {
        let (scores, reg) = self.jvp(v);
        scores.iter().map(|e| e.iter().map(|x| x * x).sum::<f64>()).sum::<f64>()
            + reg.iter().map(|x| x * x).sum::<f64>()
    }

    /// Gauss-Newton curvature `2 J^T J v`.
    pub fn gn_apply(&self, v: &TddGrads) -> TddGrads {
        let (scores, reg) = self.jvp(v);
        let mut out = self.vjp(&scores, &reg);
        out.w *= 2.0;
        out.mask *= 2.0;
        out.gamma *= 2.0;
        out
    }

    /// Splits a flat `[w, mask, gamma]` vector into gradient-shaped parts.
    pub fn unflatten(&self, flat: &[f64]) -> TddGrads {
        let (nw, nm) = (self.model.w.len(), self.model.mask.len());
        assert_eq!(flat.len(), nw + nm + 1, "parameter length");
        TddGrads {
            w: Array3::from_shape_vec(self.model.w.dim(), flat[..nw].to_vec()).expect("shape"),
            mask: Array2::from_shape_vec(self.model.mask.dim(), flat[nw..nw + nm].to_vec()).expect("shape"),
            gamma: flat[nw + nm],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate {
    pub cell: (usize, usize),
    /// Sub-cell `(dy, dx)` offset, each in `[-0.5, 0.5]`.
    pub offset: (f64, f64),
    pub y_max: f64,
}

impl PositionEstimate {
    pub fn row(&self) -> f64 {
        self.cell.0 as f64 + self.offset.0
    }

    pub fn col(&self) -> f64 {
        self.cell.1 as f64 + self.offset.1
    }
}

pub fn predict_position(smap: &ScoreMap) -> PositionEstimate {
    let (row, col, y_max) = smap.peak;
    let offset = refine_peak(&smap.scores, row, col, false);
    PositionEstimate { cell: (row, col), offset, y_max }
}
