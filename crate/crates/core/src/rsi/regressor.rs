//! Learned rotation/scale regressor: three 3x3 convolution stages with leaky
//! rectifiers after the first two, global average pooling of the last
//! stage's two channels into a log-scale head and a rotation head.
//!
//! Residuals are relative: `((s* - s) / s, (a* - a) / a)` against the label
//! `(s, a)`, with near-zero denominators replaced by a sign-preserving 1e-3.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureMap, NUM_CHANNELS};
use crate::logpolar::LogPolarPatch;
use crate::rsi::RotationScaleEstimate;

pub const LEAKY_SLOPE: f64 = 0.1;
pub const HIDDEN_CHANNELS: usize = 16;
/// Head output 1 maps to 1.1^5 in scale and to 30 degrees in rotation.
pub const SCALE_OCTAVES: f64 = 5.0;
pub const ROTATION_RANGE_DEG: f64 = 30.0;
pub const DENOMINATOR_GUARD: f64 = 1e-3;

fn log_scale_range() -> f64 {
    SCALE_OCTAVES * 1.1f64.ln()
}

/// One 3x3 convolution with padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out, in * 9)`, rows ordered as `in, ky, kx`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_channels: usize,
    pub stride: usize,
}

const K: usize = 3;

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            weight: Array2::zeros((out_channels, in_channels * K * K)),
            bias: Array1::zeros(out_channels),
            in_channels,
            stride,
        }
    }

    /// Uniform kernels in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn random(in_channels: usize, out_channels: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(in_channels, out_channels, stride);
        let bound = 1.0 / ((in_channels * K * K) as f64).sqrt();
        conv.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
        conv
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        let (ho, wo) = self.out_dims(h, w);
        let mut cols = Array2::zeros((c * K * K, ho * wo));
        for ch in 0..c {
            for ky in 0..K {
                for kx in 0..K {
                    let row = (ch * K + ky) * K + kx;
                    let mut dst = cols.row_mut(row);
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * wo + ox] = x[(ch, iy as usize, ix as usize)];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, dims: (usize, usize, usize)) -> Array3<f64> {
        let (c, h, w) = dims;
        let (ho, wo) = self.out_dims(h, w);
        let mut x = Array3::zeros(dims);
        for ch in 0..c {
            for ky in 0..K {
                for kx in 0..K {
                    let src = cols.row((ch * K + ky) * K + kx);
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                x[(ch, iy as usize, ix as usize)] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the unfolded input kept for the backward pass.
    fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (_, h, w) = x.dim();
        let (ho, wo) = self.out_dims(h, w);
        let cols = self.im2col(x);
        let mut out = self.weight.dot(&cols);
        for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row += b;
        }
        let out = out.into_shape_with_order((self.out_channels(), ho, wo)).expect("conv output shape");
        (out, cols)
    }

    /// Accumulates parameter gradients into `grad` and optionally returns the
    /// gradient with respect to the input.
    fn backward(
        &self,
        grad_out: &Array3<f64>,
        cols: &Array2<f64>,
        input_dims: (usize, usize, usize),
        grad: &mut Conv2d,
        want_input: bool,
    ) -> Option<Array3<f64>> {
        let (o, ho, wo) = grad_out.dim();
        let g: ArrayView2<f64> = grad_out.view().into_shape_with_order((o, ho * wo)).expect("contiguous gradient");
        grad.weight += &g.dot(&cols.t());
        grad.bias += &g.sum_axis(Axis(1));
        want_input.then(|| self.col2im(&self.weight.t().dot(&g), input_dims))
    }
}

fn leaky(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

fn leaky_backward(pre: &Array3<f64>, grad: &mut Array3<f64>) {
    grad.zip_mut_with(pre, |g, &z| {
        if z <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsiRegressor {
    pub layers: [Conv2d; 3],
    /// Squared-norm penalty weight per kernel bank.
    pub lambda: [f64; 3],
}

pub type RegressorGrads = RsiRegressor;

impl RsiRegressor {
    /// Random initialization for `in_channels` input channels.
    pub fn new(in_channels: usize, lambda: [f64; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: [
                Conv2d::random(in_channels, HIDDEN_CHANNELS, 1, &mut rng),
                Conv2d::random(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 2, &mut rng),
                Conv2d::random(HIDDEN_CHANNELS, 2, 1, &mut rng),
            ],
            lambda,
        }
    }

    /// Default input: standardized features of an anchor/candidate pair.
    pub fn for_pairs(lambda: [f64; 3], seed: u64) -> Self {
        Self::new(2 * NUM_CHANNELS, lambda, seed)
    }

    pub fn zeros(in_channels: usize) -> Self {
        Self {
            layers: [
                Conv2d::zeros(in_channels, HIDDEN_CHANNELS, 1),
                Conv2d::zeros(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 2),
                Conv2d::zeros(HIDDEN_CHANNELS, 2, 1),
            ],
            lambda: [0.0; 3],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.in_channels());
        z.lambda = self.lambda;
        z
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flattened `[w1, b1, w2, b2, w3, b3]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter length");
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|v| *v = *it.next().expect("length"));
            l.bias.iter_mut().for_each(|v| *v = *it.next().expect("length"));
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.in_channels() {
            return Err(Error::InvalidInput(format!(
                "regressor expects {} channels, got {}",
                self.in_channels(),
                x.channels()
            )));
        }
        if x.height() == 0 || x.width() == 0 {
            return Err(Error::InvalidInput("empty feature map".into()));
        }
        Ok(())
    }

    /// Raw `(log-scale head, rotation head)` outputs.
    pub fn heads(&self, x: &FeatureMap) -> Result<[f64; 2]> {
        self.check_input(x)?;
        Ok(self.run(&x.values).heads)
    }

    fn run(&self, x: &Array3<f64>) -> Trace {
        let (z1, c1) = self.layers[0].forward(x);
        let a1 = leaky(&z1);
        let (z2, c2) = self.layers[1].forward(&a1);
        let a2 = leaky(&z2);
        let (z3, c3) = self.layers[2].forward(&a2);
        let heads = [z3.index_axis(Axis(0), 0).mean().unwrap_or(0.0), z3.index_axis(Axis(0), 1).mean().unwrap_or(0.0)];
        Trace {
            input_dims: x.dim(),
            z1,
            c1,
            a1_dims: a1.dim(),
            z2,
            c2,
            a2_dims: a2.dim(),
            z3_dims: z3.dim(),
            c3,
            heads,
        }
    }

    /// Backpropagates head gradients through a recorded forward pass.
    fn backward(&self, trace: &Trace, d_heads: [f64; 2], grads: &mut RsiRegressor) {
        let (_, h3, w3) = trace.z3_dims;
        let area = (h3 * w3) as f64;
        let mut g3 = Array3::zeros(trace.z3_dims);
        for (c, d) in d_heads.iter().enumerate() {
            g3.index_axis_mut(Axis(0), c).fill(d / area);
        }
        let mut g2 =
            self.layers[2].backward(&g3, &trace.c3, trace.a2_dims, &mut grads.layers[2], true).expect("input gradient");
        leaky_backward(&trace.z2, &mut g2);
        let mut g1 =
            self.layers[1].backward(&g2, &trace.c2, trace.a1_dims, &mut grads.layers[1], true).expect("input gradient");
        leaky_backward(&trace.z1, &mut g1);
        self.layers[0].backward(&g1, &trace.c1, trace.input_dims, &mut grads.layers[0], false);
    }

    pub fn penalty(&self) -> f64 {
        self.layers.iter().zip(self.lambda).map(|(l, lam)| lam * l.weight.iter().map(|v| v * v).sum::<f64>()).sum()
    }
}

struct Trace {
    input_dims: (usize, usize, usize),
    z1: Array3<f64>,
    c1: Array2<f64>,
    a1_dims: (usize, usize, usize),
    z2: Array3<f64>,
    c2: Array2<f64>,
    a2_dims: (usize, usize, usize),
    z3_dims: (usize, usize, usize),
    c3: Array2<f64>,
    heads: [f64; 2],
}

pub fn decode_heads(heads: [f64; 2]) -> RotationScaleEstimate {
    RotationScaleEstimate::new((heads[0] * log_scale_range()).exp(), heads[1] * ROTATION_RANGE_DEG, 1.0)
}

pub fn regressor_forward(reg: &RsiRegressor, input: &FeatureMap) -> Result<RotationScaleEstimate> {
    Ok(decode_heads(reg.heads(input)?))
}

fn guard(d: f64) -> f64 {
    if d.abs() < DENOMINATOR_GUARD {
        if d < 0.0 {
            -DENOMINATOR_GUARD
        } else {
            DENOMINATOR_GUARD
        }
    } else {
        d
    }
}

/// Relative residual of a prediction against a `(scale, degrees)` label.
pub fn rsi_residual(pred: &RotationScaleEstimate, truth: (f64, f64)) -> (f64, f64) {
    let (scale, deg) = truth;
    ((pred.scale - scale) / guard(scale), (pred.rotation_deg - deg) / guard(deg))
}

/// Log-polar views of an anchor and its warped copy, labelled with the warp.
#[derive(Debug, Clone)]
pub struct RsiTrainingPair {
    pub anchor_lp: LogPolarPatch,
    pub translated_lp: LogPolarPatch,
    /// `(scale ratio, degrees)`.
    pub label: (f64, f64),
}

impl RsiTrainingPair {
    pub fn new(anchor_lp: LogPolarPatch, translated_lp: LogPolarPatch, label: (f64, f64)) -> Result<Self> {
        if anchor_lp.grid != translated_lp.grid {
            return Err(Error::InvalidInput("pair patches use different grids".into()));
        }
        if !(label.0 > 0.0 && label.0.is_finite() && label.1.is_finite()) {
            return Err(Error::InvalidInput(format!("label {label:?}")));
        }
        Ok(Self { anchor_lp, translated_lp, label })
    }
}

/// Regressor input for a pair: anchor features stacked on candidate features.
pub fn pair_features(anchor: &LogPolarPatch, candidate: &LogPolarPatch, cell_size: usize) -> Result<FeatureMap> {
    let a = extract_features(&anchor.as_image(), cell_size)?;
    let b = extract_features(&candidate.as_image(), cell_size)?;
    a.concat(&b)
}

/// A pair reduced to regressor input and label.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub input: FeatureMap,
    pub label: (f64, f64),
}

impl PreparedPair {
    pub fn from_pair(pair: &RsiTrainingPair, cell_size: usize) -> Result<Self> {
        Ok(Self { input: pair_features(&pair.anchor_lp, &pair.translated_lp, cell_size)?, label: pair.label })
    }
}

#[derive(Debug, Clone)]
pub struct RsiLoss {
    pub value: f64,
    pub grads: RegressorGrads,
}

/// Mean squared relative residual over the batch plus the weighted kernel
/// norms, with gradients for every kernel and bias.
pub fn rsi_loss(reg: &RsiRegressor, batch: &[PreparedPair]) -> Result<RsiLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = reg.zeros_like();
    let mut value = 0.0;
    let k_rho = log_scale_range();
    for pair in batch {
        reg.check_input(&pair.input)?;
        let trace = reg.run(&pair.input.values);
        let pred = decode_heads(trace.heads);
        let (r_rho, r_theta) = rsi_residual(&pred, pair.label);
        value += (r_rho * r_rho + r_theta * r_theta) / n;
        let d_rho = 2.0 * r_rho / n * pred.scale * k_rho / guard(pair.label.0);
        let d_theta = 2.0 * r_theta / n * ROTATION_RANGE_DEG / guard(pair.label.1);
        reg.backward(&trace, [d_rho, d_theta], &mut grads);
    }
    value += reg.penalty();
    for ((g, l), lam) in grads.layers.iter_mut().zip(&reg.layers).zip(reg.lambda) {
        g.weight.scaled_add(2.0 * lam, &l.weight);
    }
    Ok(RsiLoss { value, grads })
}

/// Loss value alone.
pub fn rsi_loss_value(reg: &RsiRegressor, batch: &[PreparedPair]) -> Result<f64> {
    let mut value = 0.0;
    for pair in batch {
        reg.check_input(&pair.input)?;
        let pred = decode_heads(reg.run(&pair.input.values).heads);
        let (a, b) = rsi_residual(&pred, pair.label);
        value += a * a + b * b;
    }
    Ok(value / batch.len().max(1) as f64 + reg.penalty())
}

/// Residual vector whose squared norm is the loss: per-pair residuals over
/// `sqrt(N)` followed by `sqrt(lambda_j) * h_j`.
pub fn rsi_residual_vector(reg: &RsiRegressor, batch: &[PreparedPair]) -> Result<Vec<f64>> {
    let k = 1.0 / (batch.len().max(1) as f64).sqrt();
    let mut out = Vec::with_capacity(2 * batch.len());
    for pair in batch {
        reg.check_input(&pair.input)?;
        let pred = decode_heads(reg.run(&pair.input.values).heads);
        let (a, b) = rsi_residual(&pred, pair.label);
        out.push(a * k);
        out.push(b * k);
    }
    for (l, lam) in reg.layers.iter().zip(reg.lambda) {
        let root = lam.sqrt();
        out.extend(l.weight.iter().map(|v| v * root));
    }
    Ok(out)
}

/// `||J v||^2` of [`rsi_residual_vector`] by central differences.
pub fn rsi_jvp_norm_sq(reg: &RsiRegressor, batch: &[PreparedPair], v: &[f64]) -> Result<f64> {
    let base = reg.params();
    let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if vnorm == 0.0 {
        return Ok(0.0);
    }
    let h = 1e-5 / vnorm;
    let mut probe = reg.clone();
    let shifted: Vec<f64> = base.iter().zip(v).map(|(p, d)| p + h * d).collect();
    probe.set_params(&shifted);
    let plus = rsi_residual_vector(&probe, batch)?;
    let shifted: Vec<f64> = base.iter().zip(v).map(|(p, d)| p - h * d).collect();
    probe.set_params(&shifted);
    let minus = rsi_residual_vector(&probe, batch)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum())
}

pub fn grads_to_vec(g: &RegressorGrads) -> Vec<f64> {
    g.params()
}

/// Slices a flat vector of layer parameters back into arrays, for tests and
/// checkpoint code.
pub fn layer_slices(reg: &RsiRegressor) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for l in &reg.layers {
        let len = l.weight.len() + l.bias.len();
        out.push((offset, offset + len));
        offset += len;
    }
    out
}
