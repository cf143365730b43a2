//! Synthetic data: the rotation/scale sampling grid for regressor training
//! and ground-truthed synthetic sequences.
//!
//! A sequence warps the whole base image by a similarity transform that
//! carries the target center along a bounded random path while the target
//! rotates at a constant rate and its scale sweeps back and forth between
//! two bounds.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bench::RotatedBox;
use crate::error::{Error, Result};
use crate::imaging::{extract_patch, sample_bilinear, warp_similarity, Image};
use crate::kv::KeyValues;
use crate::logpolar::{logpolar_warp, wrap_degrees, LogPolarGrid};
use crate::rsi::RsiTrainingPair;
use crate::tracker::TargetState;

/// Largest per-frame rotation the tracker accepts, in degrees.
pub const MAX_ROTATION_STEP: f64 = 30.0;
/// Largest per-frame scale ratio (and its reciprocal) the tracker accepts.
pub fn max_scale_step() -> f64 {
    1.1f64.powi(5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationScaleGrid {
    pub rotations: Vec<f64>,
    pub scales: Vec<f64>,
}

impl RotationScaleGrid {
    /// Every `(scale, degrees)` combination, rotation-major.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rotations.iter().flat_map(|&r| self.scales.iter().map(move |&s| (s, r))).collect()
    }

    pub fn len(&self) -> usize {
        self.rotations.len() * self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rotations 3, 6, ..., 30 degrees and scales 1.1^k for k in -5..=5 except 0.
pub fn one_sided_grid() -> RotationScaleGrid {
    RotationScaleGrid {
        rotations: (1..=10).map(|d| 3.0 * d as f64).collect(),
        scales: (-5..=5).filter(|&k| k != 0).map(|k| 1.1f64.powi(k)).collect(),
    }
}

/// [`one_sided_grid`] with both rotation signs.
pub fn symmetric_grid() -> RotationScaleGrid {
    let mut grid = one_sided_grid();
    let neg: Vec<f64> = grid.rotations.iter().map(|r| -r).collect();
    grid.rotations = neg.into_iter().rev().chain(grid.rotations).collect();
    grid
}

/// Seeded multi-octave value noise in `[0.1, 0.9]`: a stand-in natural
/// texture when no photograph is at hand.
pub fn random_texture(h: usize, w: usize, seed: u64) -> Result<Image> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidDims(format!("texture {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = ndarray::Array2::<f64>::zeros((h, w));
    for (cell, weight) in [(32.0, 1.0), (16.0, 0.6), (8.0, 0.4), (4.0, 0.25)] {
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let grid = ndarray::Array2::from_shape_fn((gh, gw), |_| rng.random_range(0.0..1.0));
        acc.indexed_iter_mut().for_each(|((r, c), v)| {
            *v += weight * sample_bilinear(&grid, c as f64 / cell, r as f64 / cell);
        });
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    Image::new(acc.mapv(|v| 0.1 + 0.8 * (v - lo) / span))
}

/// `img` scaled by `scale` and rotated by `rotation_deg` about its center.
pub fn warp_about_center(img: &Image, scale: f64, rotation_deg: f64) -> Image {
    let (h, w) = img.dims();
    let c = (0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0));
    warp_similarity(img, c, c, scale, rotation_deg, (h, w))
}

/// Warps `anchor` by each grid entry about its center and pairs the
/// log-polar views of anchor and warp. The grid is re-centered on the anchor.
pub fn make_training_pairs(
    anchor: &Image,
    grid: &RotationScaleGrid,
    lp_grid: &LogPolarGrid,
) -> Result<Vec<RsiTrainingPair>> {
    let (h, w) = anchor.dims();
    if h < 64 || w < 64 {
        return Err(Error::InvalidDims(format!("anchor {h}x{w} below 64x64")));
    }
    let lp = lp_grid.with_center((0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0)));
    let anchor_lp = logpolar_warp(anchor, &lp)?;
    grid.pairs()
        .into_iter()
        .map(|(scale, deg)| {
            let warped = warp_about_center(anchor, scale, deg);
            RsiTrainingPair::new(anchor_lp.clone(), logpolar_warp(&warped, &lp)?, (scale, deg))
        })
        .collect()
}

pub const SEGMENT_LEN: usize = 15;
/// The anchor is the 7th frame of a segment.
pub const ANCHOR_OFFSET: usize = 6;

/// Splits `n` frames into consecutive whole segments, returning each
/// segment's range and its anchor frame index.
pub fn segments(n: usize) -> Vec<(std::ops::Range<usize>, usize)> {
    (0..n / SEGMENT_LEN)
        .map(|k| {
            let start = k * SEGMENT_LEN;
            (start..start + SEGMENT_LEN, start + ANCHOR_OFFSET)
        })
        .collect()
}

/// Training pairs from an annotated frame stream: within each 15-frame
/// segment the 7th frame is the anchor and every other frame is paired with
/// it, labelled by the relative ground-truth scale and rotation. Patches of
/// both frames are sampled with the anchor's scale and orientation, so the
/// relative motion shows up in the second patch. Pairs outside the tracker's
/// motion caps are skipped.
pub fn segment_training_pairs(
    frames: &[Image],
    states: &[TargetState],
    patch: usize,
    pad: f64,
    lp_grid: &LogPolarGrid,
) -> Result<Vec<RsiTrainingPair>> {
    if frames.len() != states.len() {
        return Err(Error::InvalidInput(format!("{} frames but {} states", frames.len(), states.len())));
    }
    let half = 0.5 * (patch as f64 - 1.0);
    let lp = lp_grid.with_center((half, half));
    let mut out = Vec::new();
    for (range, anchor) in segments(frames.len()) {
        let a = states[anchor];
        let anchor_lp = logpolar_warp(&extract_patch(&frames[anchor], &a, (patch, patch), pad)?, &lp)?;
        for j in range.filter(|&j| j != anchor) {
            let s = states[j];
            let scale = s.scale / a.scale;
            let deg = wrap_degrees(s.rotation_deg - a.rotation_deg);
            if deg.abs() > MAX_ROTATION_STEP || scale > max_scale_step() || scale < 1.0 / max_scale_step() {
                continue;
            }
            let view = TargetState { cx: s.cx, cy: s.cy, ..a };
            let lp_j = logpolar_warp(&extract_patch(&frames[j], &view, (patch, patch), pad)?, &lp)?;
            out.push(RsiTrainingPair::new(anchor_lp.clone(), lp_j, (scale, deg))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub base: Image,
    pub frames: usize,
    /// Output frame size (rows, cols); defaults to the base size.
    pub frame_dims: (usize, usize),
    /// Target box at frame 0, in base-image coordinates.
    pub box_w: f64,
    pub box_h: f64,
    /// Target center at frame 0 in both base and frame coordinates.
    pub center: (f64, f64),
    /// Maximum center displacement per frame, px.
    pub translation_step: f64,
    /// Rotation per frame, degrees.
    pub rotation_step: f64,
    /// Scale ratio per frame (>= 1); the direction flips at the bounds.
    pub scale_step: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub seed: u64,
    /// Frames `[start, start + len)` have the target blanked out.
    pub occlusion: Option<(usize, usize)>,
}

impl SequenceSpec {
    /// Static defaults around the base image center with a box a quarter of
    /// the shorter side.
    pub fn new(base: Image, frames: usize) -> Self {
        let (h, w) = base.dims();
        let side = 0.25 * h.min(w) as f64;
        Self {
            frame_dims: (h, w),
            box_w: side,
            box_h: side,
            center: (0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0)),
            base,
            frames,
            translation_step: 0.0,
            rotation_step: 0.0,
            scale_step: 1.0,
            scale_min: 1.0,
            scale_max: 1.0,
            noise: 0.0,
            seed: 0,
            occlusion: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.frames == 0 {
            return bad("sequence needs at least one frame".into());
        }
        if self.rotation_step.abs() > MAX_ROTATION_STEP || !self.rotation_step.is_finite() {
            return bad(format!("rotation step {} exceeds the per-frame cap", self.rotation_step));
        }
        if !(self.scale_step >= 1.0 && self.scale_step <= max_scale_step()) {
            return bad(format!("scale step {} outside [1, 1.1^5]", self.scale_step));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= 1.0 && self.scale_max >= 1.0) {
            return bad(format!("scale bounds [{}, {}] must bracket 1", self.scale_min, self.scale_max));
        }
        if !(self.translation_step >= 0.0 && self.noise >= 0.0) {
            return bad("translation step and noise must be non-negative".into());
        }
        if !(self.box_w > 0.0 && self.box_h > 0.0) {
            return bad(format!("box {}x{}", self.box_w, self.box_h));
        }
        let (fh, fw) = self.frame_dims;
        let reach = 0.5 * self.box_w.hypot(self.box_h) * self.scale_max;
        let (cx, cy) = self.center;
        if 2.0 * reach >= fh.min(fw) as f64
            || cx - reach < 0.0
            || cy - reach < 0.0
            || cx + reach > fw as f64 - 1.0
            || cy + reach > fh as f64 - 1.0
        {
            return Err(Error::InvalidDims(format!(
                "{fh}x{fw} frame cannot hold the target (radius {reach:.1} px at the largest scale) around ({cx}, {cy})"
            )));
        }
        let (bh, bw) = self.base.dims();
        let base_reach = 0.5 * self.box_w.hypot(self.box_h) / self.scale_min;
        if cx - base_reach < 0.0
            || cy - base_reach < 0.0
            || cx + base_reach > bw as f64 - 1.0
            || cy + base_reach > bh as f64 - 1.0
        {
            return Err(Error::InvalidDims(format!(
                "{bh}x{bw} base image does not cover the target at the smallest scale"
            )));
        }
        Ok(())
    }

    /// Reads a `key = value` spec; `base` is resolved relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        kv.reject_unknown(&[
            "base",
            "frames",
            "frame_width",
            "frame_height",
            "box_w",
            "box_h",
            "center_x",
            "center_y",
            "translation_step",
            "rotation_step",
            "scale_step",
            "scale_min",
            "scale_max",
            "noise",
            "seed",
            "occlusion_start",
            "occlusion_len",
        ])?;
        let base_rel = kv.get_str("base").ok_or_else(|| Error::parse(path, 0, "missing key \"base\""))?;
        let base_path = path.parent().unwrap_or(Path::new(".")).join(base_rel);
        let frames = kv.get::<usize>("frames")?.unwrap_or(100);
        let mut spec = Self::new(Image::load(&base_path)?, frames);
        let mut fw = spec.frame_dims.1;
        let mut fh = spec.frame_dims.0;
        kv.set("frame_width", &mut fw)?;
        kv.set("frame_height", &mut fh)?;
        spec.frame_dims = (fh, fw);
        kv.set("box_w", &mut spec.box_w)?;
        kv.set("box_h", &mut spec.box_h)?;
        kv.set("center_x", &mut spec.center.0)?;
        kv.set("center_y", &mut spec.center.1)?;
        kv.set("translation_step", &mut spec.translation_step)?;
        kv.set("rotation_step", &mut spec.rotation_step)?;
        kv.set("scale_step", &mut spec.scale_step)?;
        kv.set("scale_min", &mut spec.scale_min)?;
        kv.set("scale_max", &mut spec.scale_max)?;
        kv.set("noise", &mut spec.noise)?;
        kv.set("seed", &mut spec.seed)?;
        if let Some(start) = kv.get::<usize>("occlusion_start")? {
            spec.occlusion = Some((start, kv.get::<usize>("occlusion_len")?.unwrap_or(20)));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn initial_state(&self) -> TargetState {
        TargetState {
            cx: self.center.0,
            cy: self.center.1,
            base_w: self.box_w,
            base_h: self.box_h,
            scale: 1.0,
            rotation_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<Image>,
    pub truth: Vec<TargetState>,
}

impl SyntheticSequence {
    pub fn boxes(&self) -> Vec<RotatedBox> {
        self.truth.iter().map(RotatedBox::from_state).collect()
    }
}

/// Ground-truth states only; frames follow deterministically from them.
pub fn ground_truth_path(spec: &SequenceSpec) -> Result<Vec<TargetState>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (fh, fw) = spec.frame_dims;
    let mut state = spec.initial_state();
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut growing = true;
    let mut out = Vec::with_capacity(spec.frames);
    out.push(state);
    for _ in 1..spec.frames {
        // Scale sweeps between the bounds with a constant ratio step.
        if spec.scale_step > 1.0 {
            let next = if growing { state.scale * spec.scale_step } else { state.scale / spec.scale_step };
            if next > spec.scale_max || next < spec.scale_min {
                growing = !growing;
            }
            let next = if growing { state.scale * spec.scale_step } else { state.scale / spec.scale_step };
            if next <= spec.scale_max && next >= spec.scale_min {
                state.scale = next;
            }
        }
        state.rotation_deg = wrap_degrees(state.rotation_deg + spec.rotation_step);

        // Smoothly turning heading; reflect off a margin that keeps the
        // largest possible box inside the frame.
        if spec.translation_step > 0.0 {
            heading += rng.random_range(-0.5..0.5);
            let speed = spec.translation_step * rng.random_range(0.5..=1.0);
            let margin = 0.5 * spec.box_w.hypot(spec.box_h) * spec.scale_max + 1.0;
            let (lo_x, hi_x) = (margin, fw as f64 - 1.0 - margin);
            let (lo_y, hi_y) = (margin, fh as f64 - 1.0 - margin);
            let mut nx = state.cx + speed * heading.cos();
            let mut ny = state.cy + speed * heading.sin();
            if nx < lo_x || nx > hi_x {
                heading = std::f64::consts::PI - heading;
                nx = state.cx + speed * heading.cos();
            }
            if ny < lo_y || ny > hi_y {
                heading = -heading;
                ny = state.cy + speed * heading.sin();
            }
            state.cx = nx.clamp(lo_x, hi_x);
            state.cy = ny.clamp(lo_y, hi_y);
        }
        out.push(state);
    }
    Ok(out)
}

fn blank_box(img: &mut Image, b: &RotatedBox, value: f64) {
    let (h, w) = img.dims();
    let (s, c) = b.angle_deg.to_radians().sin_cos();
    let reach = 0.5 * b.w.hypot(b.h) + 1.0;
    let r0 = (b.cy - reach).floor().max(0.0) as usize;
    let r1 = ((b.cy + reach).ceil() as usize).min(h - 1);
    let c0 = (b.cx - reach).floor().max(0.0) as usize;
    let c1 = ((b.cx + reach).ceil() as usize).min(w - 1);
    let mut px = std::mem::replace(img, Image::constant(1, 1, 0.0).expect("1x1")).into_pixels();
    for r in r0..=r1 {
        for col in c0..=c1 {
            let (dx, dy) = (col as f64 - b.cx, r as f64 - b.cy);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            if u.abs() <= 0.5 * b.w && v.abs() <= 0.5 * b.h {
                px[(r, col)] = value;
            }
        }
    }
    *img = Image::new(px).expect("pixels stay in range");
}

pub fn generate_sequence(spec: &SequenceSpec) -> Result<SyntheticSequence> {
    let truth = ground_truth_path(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let fill = spec.base.mean();
    let mut frames = Vec::with_capacity(truth.len());
    for (t, state) in truth.iter().enumerate() {
        let mut frame = warp_similarity(
            &spec.base,
            spec.center,
            (state.cx, state.cy),
            state.scale,
            state.rotation_deg,
            spec.frame_dims,
        );
        if let Some((start, len)) = spec.occlusion {
            if t >= start && t < start + len {
                blank_box(&mut frame, &RotatedBox::from_state(state), fill);
            }
        }
        if spec.noise > 0.0 {
            let px = frame.into_pixels().mapv(|v| v + noise.sample(&mut rng));
            frame = Image::from_clamped(px)?;
        }
        frames.push(frame);
    }
    Ok(SyntheticSequence { frames, truth })
}
