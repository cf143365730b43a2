//! Online tracking loop.
//!
//! Each frame runs two stages. The discriminative filter scores a search
//! patch sampled around the previous state (rotated and scaled with it) and
//! moves the center to the score peak. A rotation/scale patch sampled at the
//! new center is then compared with the stored template, and the residual
//! rotation and scale, clamped to the per-frame caps, are composed onto the
//! state. Peak scores feed the energy statistic that gates model updates.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{FrameRecord, RotatedBox};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureMap};
use crate::imaging::{extract_patch, Image};
use crate::kv::KeyValues;
use crate::logpolar::{logpolar_warp, wrap_degrees, LogPolarGrid, LogPolarPatch};
use crate::optimizer::{
    adaptive_rate, dot, should_update, spatiotemporal_energy, steepest_step_from_parts, EnergyStats, UpdateController,
};
use crate::rsi::checkpoint;
use crate::rsi::regressor::{pair_features, rsi_jvp_norm_sq, rsi_loss, PreparedPair};
use crate::rsi::{regressor_forward, train_rsi, AnalyticEstimator, RotationScaleEstimate, RsiRegressor, TrainConfig};
use crate::synth::{make_training_pairs, symmetric_grid};
use crate::tdd::{
    gaussian_label, predict_position, score, DiscriminativeModel, LabelMap, ScoreMap, TddProblem, TddSample,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetState {
    pub cx: f64,
    pub cy: f64,
    pub base_w: f64,
    pub base_h: f64,
    pub scale: f64,
    pub rotation_deg: f64,
}

impl TargetState {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.cx, self.cy, self.base_w, self.base_h, self.scale, self.rotation_deg];
        if fields.iter().any(|v| !v.is_finite()) || self.scale <= 0.0 || self.base_w <= 0.0 || self.base_h <= 0.0 {
            return Err(Error::InvalidState(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn from_box(b: &RotatedBox) -> Self {
        Self { cx: b.cx, cy: b.cy, base_w: b.w, base_h: b.h, scale: 1.0, rotation_deg: wrap_degrees(b.angle_deg) }
    }

    pub fn rotated_box(&self) -> RotatedBox {
        RotatedBox::from_state(self)
    }
}

/// Which rotation/scale estimator runs in the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    Analytic,
    Learned,
    /// Learned estimate when it agrees with the analytic one, else analytic.
    Fused,
    /// Position only; rotation and scale stay at their initial values.
    Off,
}

impl FromStr for EstimatorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "analytic" => Ok(Self::Analytic),
            "learned" => Ok(Self::Learned),
            "fused" => Ok(Self::Fused),
            "off" => Ok(Self::Off),
            other => Err(format!("unknown estimator mode {other:?}")),
        }
    }
}

/// How model updates are scheduled after the bootstrap frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePolicy {
    /// Check frames whose energy passes the gate.
    Gated,
    /// Every check frame.
    Fixed,
    /// Never, including bootstrap.
    Off,
}

impl FromStr for UpdatePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gated" => Ok(Self::Gated),
            "fixed" => Ok(Self::Fixed),
            "off" => Ok(Self::Off),
            other => Err(format!("unknown update policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub cell_size: usize,
    /// Side of the search patch in cells; odd so one cell sits on the center.
    pub search_cells: usize,
    pub search_pad: f64,
    pub rsi_patch: usize,
    pub rsi_pad: f64,
    pub lp_bins: usize,
    pub max_rotation_step: f64,
    pub max_scale_step: f64,
    pub mode: EstimatorMode,
    pub policy: UpdatePolicy,
    pub kappa: f64,
    pub check_period: usize,
    pub energy_period: usize,
    pub history: usize,
    pub min_sigma: f64,
    pub epsilon_floor: f64,
    pub mu: f64,
    pub max_steps_per_update: usize,
    /// Step cap for the unconditional updates before the baseline frame.
    pub bootstrap_cap: f64,
    /// Frame at which the baseline energy is taken.
    pub bootstrap_frames: usize,
    pub memory: usize,
    pub gamma_init: f64,
    pub init_steps: usize,
    pub fused_tolerance_deg: f64,
    pub fused_tolerance_scale: f64,
    /// Analytic estimates with a weaker correlation peak (peak-to-sidelobe
    /// ratio) are discarded.
    pub rsi_min_confidence: f64,
    pub regressor_weights: Option<PathBuf>,
    /// Log-polar bins per axis of the regressor input.
    pub regressor_bins: usize,
    pub regressor_epochs: usize,
    pub regressor_batch: usize,
    pub regressor_lr: f64,
    /// Synthesized pairs per online regressor step.
    pub online_pairs: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            cell_size: 2,
            search_cells: 41,
            search_pad: 4.0,
            rsi_patch: 128,
            rsi_pad: 2.0,
            lp_bins: 64,
            max_rotation_step: 30.0,
            max_scale_step: 1.1f64.powi(5),
            mode: EstimatorMode::Analytic,
            policy: UpdatePolicy::Gated,
            kappa: 0.8,
            check_period: 10,
            energy_period: 5,
            history: 5,
            min_sigma: 1e-6,
            epsilon_floor: 1e-6,
            mu: 50.0,
            max_steps_per_update: 3,
            bootstrap_cap: 0.1,
            bootstrap_frames: 5,
            memory: 30,
            gamma_init: 1e-2,
            init_steps: 50,
            fused_tolerance_deg: 4.0,
            fused_tolerance_scale: 0.05,
            rsi_min_confidence: 8.0,
            regressor_weights: None,
            regressor_bins: 32,
            regressor_epochs: 30,
            regressor_batch: 8,
            regressor_lr: 1e-2,
            online_pairs: 8,
            seed: 0,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "cell_size",
    "search_cells",
    "search_pad",
    "rsi_patch",
    "rsi_pad",
    "lp_bins",
    "max_rotation_step",
    "max_scale_step",
    "mode",
    "policy",
    "kappa",
    "check_period",
    "energy_period",
    "history",
    "min_sigma",
    "epsilon_floor",
    "mu",
    "max_steps_per_update",
    "bootstrap_cap",
    "bootstrap_frames",
    "memory",
    "gamma_init",
    "init_steps",
    "fused_tolerance_deg",
    "fused_tolerance_scale",
    "rsi_min_confidence",
    "regressor_weights",
    "regressor_bins",
    "regressor_epochs",
    "regressor_batch",
    "regressor_lr",
    "online_pairs",
    "seed",
];

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.cell_size == 0 || self.search_cells < 5 || self.search_cells % 2 == 0 {
            return bad(format!(
                "search grid of {} cells (cell {} px) must be odd and at least 5",
                self.search_cells, self.cell_size
            ));
        }
        if !(self.search_pad > 1.0 && self.rsi_pad > 0.0) {
            return bad("pad factors must be positive and the search pad above 1".into());
        }
        if self.rsi_patch < 32 || self.lp_bins < 8 || self.regressor_bins < 8 {
            return bad(format!(
                "rotation/scale patch {} or log-polar bins {} too small",
                self.rsi_patch, self.lp_bins
            ));
        }
        if !(self.max_rotation_step > 0.0 && self.max_scale_step > 1.0) {
            return bad("motion caps must be positive".into());
        }
        if self.energy_period == 0 || self.history == 0 || self.memory == 0 {
            return bad("energy period, history and memory must be positive".into());
        }
        if !(self.mu >= 0.0 && self.bootstrap_cap > 0.0) {
            return bad("mu must be non-negative and the bootstrap cap positive".into());
        }
        self.controller().validate()
    }

    pub fn controller(&self) -> UpdateController {
        UpdateController {
            kappa: self.kappa,
            epsilon_0: None,
            check_period: self.check_period,
            min_sigma: self.min_sigma,
            epsilon_floor: self.epsilon_floor,
        }
    }

    /// Applies every key present in `kv` over `self`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.reject_unknown(CONFIG_KEYS)?;
        kv.set("cell_size", &mut self.cell_size)?;
        kv.set("search_cells", &mut self.search_cells)?;
        kv.set("search_pad", &mut self.search_pad)?;
        kv.set("rsi_patch", &mut self.rsi_patch)?;
        kv.set("rsi_pad", &mut self.rsi_pad)?;
        kv.set("lp_bins", &mut self.lp_bins)?;
        kv.set("max_rotation_step", &mut self.max_rotation_step)?;
        kv.set("max_scale_step", &mut self.max_scale_step)?;
        kv.set("mode", &mut self.mode)?;
        kv.set("policy", &mut self.policy)?;
        kv.set("kappa", &mut self.kappa)?;
        kv.set("check_period", &mut self.check_period)?;
        kv.set("energy_period", &mut self.energy_period)?;
        kv.set("history", &mut self.history)?;
        kv.set("min_sigma", &mut self.min_sigma)?;
        kv.set("epsilon_floor", &mut self.epsilon_floor)?;
        kv.set("mu", &mut self.mu)?;
        kv.set("max_steps_per_update", &mut self.max_steps_per_update)?;
        kv.set("bootstrap_cap", &mut self.bootstrap_cap)?;
        kv.set("bootstrap_frames", &mut self.bootstrap_frames)?;
        kv.set("memory", &mut self.memory)?;
        kv.set("gamma_init", &mut self.gamma_init)?;
        kv.set("init_steps", &mut self.init_steps)?;
        kv.set("fused_tolerance_deg", &mut self.fused_tolerance_deg)?;
        kv.set("fused_tolerance_scale", &mut self.fused_tolerance_scale)?;
        kv.set("rsi_min_confidence", &mut self.rsi_min_confidence)?;
        kv.set("regressor_bins", &mut self.regressor_bins)?;
        kv.set("regressor_epochs", &mut self.regressor_epochs)?;
        kv.set("regressor_batch", &mut self.regressor_batch)?;
        kv.set("regressor_lr", &mut self.regressor_lr)?;
        kv.set("online_pairs", &mut self.online_pairs)?;
        kv.set("seed", &mut self.seed)?;
        if let Some(p) = kv.get_str("regressor_weights") {
            let base = kv.path().parent().unwrap_or(Path::new("."));
            self.regressor_weights = Some(base.join(p));
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&KeyValues::load(path)?)?;
        Ok(cfg)
    }

    fn search_px(&self) -> usize {
        self.search_cells * self.cell_size
    }

    fn center_cell(&self) -> usize {
        self.search_cells / 2
    }

    /// Target box extent in cells along each axis.
    fn box_cells(&self) -> f64 {
        self.search_cells as f64 / self.search_pad
    }

    fn kernel_side(&self) -> usize {
        (self.box_cells().round() as usize).max(1) | 1
    }

    fn label_sigma(&self) -> f64 {
        (0.125 * self.box_cells()).max(1.0)
    }

    fn rsi_lp_grid(&self) -> LogPolarGrid {
        LogPolarGrid::for_patch(self.rsi_patch, self.rsi_patch).with_bins(self.lp_bins, self.lp_bins)
    }

    fn regressor_lp_grid(&self) -> LogPolarGrid {
        LogPolarGrid::for_patch(self.rsi_patch, self.rsi_patch).with_bins(self.regressor_bins, self.regressor_bins)
    }
}

/// Per-frame output of the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutput {
    pub state: TargetState,
    /// Energy on bookkeeping frames.
    pub eps: Option<f64>,
    pub y_max: f64,
    pub updated: bool,
    /// Gate outcome on check frames after the bootstrap.
    pub gate: Option<bool>,
    /// Residual rotation/scale applied this frame, after clamping.
    pub delta: RotationScaleEstimate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateCounters {
    pub updates: usize,
    pub checks: usize,
    pub skipped: usize,
}

pub struct Tracker {
    cfg: TrackerConfig,
    state: TargetState,
    frame_index: usize,
    model: DiscriminativeModel,
    memory: VecDeque<TddSample>,
    label: LabelMap,
    analytic: Option<AnalyticEstimator>,
    template_lp: Option<LogPolarPatch>,
    template_patch: Option<Image>,
    regressor: Option<RsiRegressor>,
    stats: EnergyStats,
    controller: UpdateController,
    rng: ChaCha8Rng,
    counters: UpdateCounters,
}

impl Tracker {
    pub fn init(frame0: &Image, annotation: &RotatedBox, cfg: TrackerConfig) -> Result<(Self, FrameOutput)> {
        cfg.validate()?;
        check_annotation(frame0, annotation)?;
        let state = TargetState::from_box(annotation);
        let n = cfg.search_cells;
        let c = cfg.center_cell();
        let label = gaussian_label((n, n), (c, c), cfg.label_sigma())?;

        let samples = first_frame_samples(frame0, &state, &cfg)?;
        let base = &samples[0].features;
        if base.values.iter().all(|v| v.abs() < 1e-12) {
            return Err(Error::NoSignal("first-frame target patch has no texture".into()));
        }
        let k = cfg.kernel_side();
        let model = DiscriminativeModel::from_template(base, (c, c), (k, k), 2.0 * cfg.label_sigma(), cfg.gamma_init)?;

        let mut tracker = Self {
            state,
            frame_index: 0,
            model,
            memory: samples.into_iter().collect(),
            label,
            analytic: None,
            template_lp: None,
            template_patch: None,
            regressor: None,
            stats: EnergyStats::new(cfg.history, cfg.min_sigma),
            controller: cfg.controller(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            counters: UpdateCounters::default(),
            cfg,
        };
        tracker.fit_initial()?;
        if tracker.cfg.mode != EstimatorMode::Off {
            let patch = tracker.rsi_patch(frame0, &tracker.state)?;
            let mut est = AnalyticEstimator::new(patch.dims(), &tracker.cfg.rsi_lp_grid())?;
            est.set_template(&patch)?;
            tracker.analytic = Some(est);
            tracker.set_template(&patch)?;
            if matches!(tracker.cfg.mode, EstimatorMode::Learned | EstimatorMode::Fused) {
                tracker.regressor = Some(tracker.initial_regressor(&patch)?);
            }
        }
        let smap = score(&tracker.model, &tracker.memory[0].features)?;
        let y_max = smap.peak.2;
        tracker.stats.push(y_max);
        let out = FrameOutput {
            state: tracker.state,
            eps: None,
            y_max,
            updated: false,
            gate: None,
            delta: RotationScaleEstimate::new(1.0, 0.0, 0.0),
        };
        Ok((tracker, out))
    }

    pub fn state(&self) -> &TargetState {
        &self.state
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &DiscriminativeModel {
        &self.model
    }

    pub fn counters(&self) -> UpdateCounters {
        self.counters
    }

    pub fn controller(&self) -> &UpdateController {
        &self.controller
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    /// Score map of the search patch around `state`.
    pub fn score_at(&self, frame: &Image, state: &TargetState) -> Result<ScoreMap> {
        score(&self.model, &search_features(frame, state, &self.cfg)?)
    }

    pub fn track_frame(&mut self, frame: &Image) -> Result<FrameOutput> {
        self.frame_index += 1;
        let t = self.frame_index;
        let prev = self.state;

        // Stage 1: position from the discriminative score peak.
        let smap = self.score_at(frame, &prev)?;
        let pos = predict_position(&smap);
        let cc = self.cfg.center_cell() as f64;
        let (px_x, px_y) = search_pixel_size(&prev, &self.cfg);
        let cs = self.cfg.cell_size as f64;
        let (du, dv) = ((pos.col() - cc) * cs * px_x, (pos.row() - cc) * cs * px_y);
        let (s, c) = prev.rotation_deg.to_radians().sin_cos();
        let (h, w) = frame.dims();
        let mut state = TargetState {
            cx: (prev.cx + du * c - dv * s).clamp(0.0, w as f64 - 1.0),
            cy: (prev.cy + du * s + dv * c).clamp(0.0, h as f64 - 1.0),
            ..prev
        };

        // Stage 2: residual rotation/scale against the template.
        let mut delta = RotationScaleEstimate::new(1.0, 0.0, 0.0);
        if self.cfg.mode != EstimatorMode::Off {
            let patch = self.rsi_patch(frame, &state)?;
            if let Some(est) = self.estimate(&patch) {
                delta = self.clamp_delta(est);
            }
            state.scale *= delta.scale;
            state.rotation_deg = wrap_degrees(state.rotation_deg + delta.rotation_deg);
        }
        state.validate()?;
        self.state = state;

        // Energy bookkeeping, then the update decision.
        let y_max = pos.y_max;
        let mut eps = None;
        if t % self.cfg.energy_period == 0 && !self.stats.is_empty() {
            let e = spatiotemporal_energy(&smap, &self.stats)?.eps;
            if t == self.cfg.bootstrap_frames {
                self.controller.epsilon_0 = Some(e.max(self.cfg.epsilon_floor));
            }
            eps = Some(e);
        }
        self.stats.push(y_max);

        let mut updated = false;
        let mut gate = None;
        if self.cfg.policy != UpdatePolicy::Off {
            if t < self.cfg.bootstrap_frames || self.controller.epsilon_0.is_none() {
                if t < self.cfg.bootstrap_frames {
                    self.update(frame, None, 1)?;
                    updated = true;
                }
            } else if self.controller.is_check_frame(t) {
                self.counters.checks += 1;
                let e = eps.unwrap_or_else(|| spatiotemporal_energy(&smap, &self.stats).map_or(0.0, |e| e.eps));
                let accept = match self.cfg.policy {
                    UpdatePolicy::Gated => should_update(t, e, &self.controller),
                    _ => true,
                };
                gate = Some(accept);
                if accept {
                    self.update(frame, Some(e), self.cfg.max_steps_per_update)?;
                    updated = true;
                } else {
                    self.counters.skipped += 1;
                }
            }
        }
        Ok(FrameOutput { state: self.state, eps, y_max, updated, gate, delta })
    }

    fn rsi_patch(&self, frame: &Image, state: &TargetState) -> Result<Image> {
        let n = self.cfg.rsi_patch;
        extract_patch(frame, state, (n, n), self.cfg.rsi_pad)
    }

    fn set_template(&mut self, patch: &Image) -> Result<()> {
        if let Some(est) = self.analytic.as_mut() {
            est.set_template(patch)?;
        }
        let lp = self.cfg.regressor_lp_grid();
        self.template_lp = Some(logpolar_warp(patch, &lp)?);
        self.template_patch = Some(patch.clone());
        Ok(())
    }

    fn estimate(&self, patch: &Image) -> Option<RotationScaleEstimate> {
        let analytic = || {
            self.analytic
                .as_ref()
                .and_then(|e| e.estimate(patch).ok())
                .filter(|e| e.confidence >= self.cfg.rsi_min_confidence)
        };
        let learned = || -> Option<RotationScaleEstimate> {
            let reg = self.regressor.as_ref()?;
            let lp = logpolar_warp(patch, &self.cfg.regressor_lp_grid()).ok()?;
            let input = pair_features(self.template_lp.as_ref()?, &lp, self.cfg.cell_size).ok()?;
            regressor_forward(reg, &input).ok()
        };
        match self.cfg.mode {
            EstimatorMode::Off => None,
            EstimatorMode::Analytic => analytic(),
            EstimatorMode::Learned => learned(),
            EstimatorMode::Fused => {
                let a = analytic();
                match (a, learned()) {
                    (Some(a), Some(l))
                        if wrap_degrees(l.rotation_deg - a.rotation_deg).abs() <= self.cfg.fused_tolerance_deg
                            && (l.scale / a.scale - 1.0).abs() <= self.cfg.fused_tolerance_scale =>
                    {
                        Some(l)
                    }
                    (Some(a), _) => Some(a),
                    (None, l) => l,
                }
            }
        }
    }

    fn clamp_delta(&self, est: RotationScaleEstimate) -> RotationScaleEstimate {
        let cap = self.cfg.max_scale_step;
        let scale = if est.scale.is_finite() && est.scale > 0.0 { est.scale.clamp(1.0 / cap, cap) } else { 1.0 };
        let rot = est.rotation_deg.clamp(-self.cfg.max_rotation_step, self.cfg.max_rotation_step);
        RotationScaleEstimate { scale, rotation_deg: rot, confidence: est.confidence }
    }

    fn initial_regressor(&self, patch: &Image) -> Result<RsiRegressor> {
        if let Some(path) = &self.cfg.regressor_weights {
            let reg = checkpoint::load(path)?;
            if reg.in_channels() != 2 * crate::features::NUM_CHANNELS {
                return Err(Error::Checkpoint(format!(
                    "{}: regressor takes {} channels",
                    path.display(),
                    reg.in_channels()
                )));
            }
            return Ok(reg);
        }
        let pairs = make_training_pairs(patch, &symmetric_grid(), &self.cfg.regressor_lp_grid())?;
        let prepared =
            pairs.iter().map(|p| PreparedPair::from_pair(p, self.cfg.cell_size)).collect::<Result<Vec<_>>>()?;
        let train = TrainConfig {
            epochs: self.cfg.regressor_epochs.max(1),
            learning_rate: self.cfg.regressor_lr,
            batch_size: self.cfg.regressor_batch.max(1),
            seed: self.cfg.seed,
            ..TrainConfig::default()
        };
        let init = RsiRegressor::for_pairs([1e-4; 3], self.cfg.seed);
        Ok(train_rsi(init, &prepared, &train)?.regressor)
    }

    /// Fits the discriminative model to the first-frame samples until the
    /// loss stops improving.
    fn fit_initial(&mut self) -> Result<()> {
        let mut last = f64::INFINITY;
        for _ in 0..self.cfg.init_steps {
            let loss = self.descend_td(None, f64::INFINITY)?;
            if last - loss <= 1e-4 * last.abs() {
                break;
            }
            last = loss;
        }
        Ok(())
    }

    /// One steepest-descent step on the discriminative loss alone; returns
    /// the loss before the step.
    fn descend_td(&mut self, eps: Option<f64>, cap: f64) -> Result<f64> {
        let samples = self.memory.make_contiguous();
        let problem = TddProblem::new(&self.model, samples)?;
        let loss = problem.loss();
        let g = loss.grads.to_vec();
        let gg = dot(&g, &g);
        let glg = 2.0 * problem.jvp_norm_sq(&loss.grads);
        let alpha_s = steepest_step_from_parts(gg, glg).min(cap);
        let alpha = match eps {
            Some(e) if e > 0.0 => adaptive_rate(e, alpha_s)?,
            _ => alpha_s,
        };
        let params: Vec<f64> = self.model.params().iter().zip(&g).map(|(p, d)| p - alpha * d).collect();
        self.model.set_params(&params);
        self.model.clamp();
        Ok(loss.value)
    }

    /// Adds the current frame to memory and takes up to `steps` steps on the
    /// combined loss, then refreshes the rotation/scale template.
    fn update(&mut self, frame: &Image, eps: Option<f64>, steps: usize) -> Result<()> {
        let features = search_features(frame, &self.state, &self.cfg)?;
        if self.memory.len() >= self.cfg.memory {
            self.memory.pop_front();
        }
        self.memory.push_back(TddSample { features, label: self.label.clone() });
        let cap = if eps.is_none() { self.cfg.bootstrap_cap } else { f64::INFINITY };
        let online = match (&self.regressor, self.cfg.mode) {
            (Some(_), EstimatorMode::Learned | EstimatorMode::Fused) => self.online_pairs(frame)?,
            _ => Vec::new(),
        };
        for _ in 0..steps {
            if online.is_empty() {
                self.combined_td_step(eps, cap)?;
            } else {
                self.combined_step(&online, eps, cap)?;
            }
        }
        if self.cfg.mode != EstimatorMode::Off {
            let patch = self.rsi_patch(frame, &self.state)?;
            // A textureless patch keeps the previous template.
            if patch.std_dev() > 1e-9 {
                self.set_template(&patch)?;
            }
        }
        self.counters.updates += 1;
        Ok(())
    }

    /// Combined-loss step when the rotation/scale branch has no parameters:
    /// `L = mu * L_td`.
    fn combined_td_step(&mut self, eps: Option<f64>, cap: f64) -> Result<()> {
        let samples = self.memory.make_contiguous();
        let problem = TddProblem::new(&self.model, samples)?;
        let loss = problem.loss();
        let mu = self.cfg.mu;
        let g: Vec<f64> = loss.grads.to_vec().iter().map(|v| mu * v).collect();
        let gg = dot(&g, &g);
        let glg = mu * 2.0 * problem.jvp_norm_sq(&problem.unflatten(&g));
        let alpha_s = steepest_step_from_parts(gg, glg).min(cap);
        let alpha = match eps {
            Some(e) if e > 0.0 => adaptive_rate(e, alpha_s)?,
            _ => alpha_s,
        };
        let params: Vec<f64> = self.model.params().iter().zip(&g).map(|(p, d)| p - alpha * d).collect();
        self.model.set_params(&params);
        self.model.clamp();
        Ok(())
    }

    /// Step on `L_rs + mu * L_td` over the regressor and discriminative
    /// parameters jointly, with one step length for both.
    fn combined_step(&mut self, pairs: &[PreparedPair], eps: Option<f64>, cap: f64) -> Result<()> {
        let reg = self.regressor.as_mut().expect("online pairs imply a regressor");
        let rs = rsi_loss(reg, pairs)?;
        let g_rs = rs.grads.params();
        let samples = self.memory.make_contiguous();
        let problem = TddProblem::new(&self.model, samples)?;
        let td = problem.loss();
        let mu = self.cfg.mu;
        let g_td: Vec<f64> = td.grads.to_vec().iter().map(|v| mu * v).collect();
        let gg = dot(&g_rs, &g_rs) + dot(&g_td, &g_td);
        let glg = 2.0 * rsi_jvp_norm_sq(reg, pairs, &g_rs)? + mu * 2.0 * problem.jvp_norm_sq(&problem.unflatten(&g_td));
        let alpha_s = steepest_step_from_parts(gg, glg).min(cap);
        let alpha = match eps {
            Some(e) if e > 0.0 => adaptive_rate(e, alpha_s)?,
            _ => alpha_s,
        };
        let p_rs: Vec<f64> = reg.params().iter().zip(&g_rs).map(|(p, d)| p - alpha * d).collect();
        reg.set_params(&p_rs);
        let p_td: Vec<f64> = self.model.params().iter().zip(&g_td).map(|(p, d)| p - alpha * d).collect();
        self.model.set_params(&p_td);
        self.model.clamp();
        Ok(())
    }

    /// Self-labelled pairs for the regressor: the current patch warped by
    /// randomly chosen grid entries.
    fn online_pairs(&mut self, frame: &Image) -> Result<Vec<PreparedPair>> {
        let patch = self.rsi_patch(frame, &self.state)?;
        let mut grid = symmetric_grid();
        grid.rotations.shuffle(&mut self.rng);
        grid.scales.shuffle(&mut self.rng);
        let k = self.cfg.online_pairs.max(1);
        grid.rotations.truncate(k);
        grid.scales.truncate(1);
        let pairs = make_training_pairs(&patch, &grid, &self.cfg.regressor_lp_grid())?;
        pairs.iter().map(|p| PreparedPair::from_pair(p, self.cfg.cell_size)).collect()
    }
}

fn check_annotation(frame: &Image, b: &RotatedBox) -> Result<()> {
    if !(b.w > 0.0 && b.h > 0.0) || ![b.cx, b.cy, b.w, b.h].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidState(format!("degenerate annotation {b:?}")));
    }
    let (h, w) = frame.dims();
    let inside = b.corners().iter().all(|&(x, y)| x >= -1.0 && y >= -1.0 && x <= w as f64 && y <= h as f64);
    if !inside {
        return Err(Error::InvalidState(format!("annotation {b:?} leaves the {h}x{w} frame")));
    }
    Ok(())
}

fn search_pixel_size(state: &TargetState, cfg: &TrackerConfig) -> (f64, f64) {
    let n = cfg.search_px() as f64;
    (cfg.search_pad * state.base_w * state.scale / n, cfg.search_pad * state.base_h * state.scale / n)
}

fn search_features(frame: &Image, state: &TargetState, cfg: &TrackerConfig) -> Result<FeatureMap> {
    let n = cfg.search_px();
    let patch = extract_patch(frame, state, (n, n), cfg.search_pad)?;
    extract_features(&patch, cfg.cell_size)
}

/// The annotated sample plus shifted (±2 cells), rotated (±5°) and scaled
/// (×/÷1.05) copies, each labelled at the target's position in its patch.
fn first_frame_samples(frame: &Image, state: &TargetState, cfg: &TrackerConfig) -> Result<Vec<TddSample>> {
    let n = cfg.search_cells;
    let c = cfg.center_cell() as isize;
    let sigma = cfg.label_sigma();
    let (px_x, px_y) = search_pixel_size(state, cfg);
    let cs = cfg.cell_size as f64;
    let mut out = Vec::with_capacity(9);
    let mut push = |view: TargetState, label_at: (isize, isize)| -> Result<()> {
        let features = search_features(frame, &view, cfg)?;
        let label = gaussian_label((n, n), (label_at.0 as usize, label_at.1 as usize), sigma)?;
        out.push(TddSample { features, label });
        Ok(())
    };
    push(*state, (c, c))?;
    for (dr, dc) in [(0isize, 2isize), (0, -2), (2, 0), (-2, 0)] {
        // Moving the patch by +d cells puts the target d cells before center.
        let view = TargetState { cx: state.cx + dc as f64 * cs * px_x, cy: state.cy + dr as f64 * cs * px_y, ..*state };
        push(view, (c - dr, c - dc))?;
    }
    for rot in [5.0, -5.0] {
        push(TargetState { rotation_deg: state.rotation_deg + rot, ..*state }, (c, c))?;
    }
    for scale in [1.05, 1.0 / 1.05] {
        push(TargetState { scale: state.scale * scale, ..*state }, (c, c))?;
    }
    Ok(out)
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<FrameOutput>,
    pub counters: UpdateCounters,
    pub epsilon_0: Option<f64>,
    pub seconds: f64,
}

impl RunOutput {
    pub fn states(&self) -> Vec<TargetState> {
        self.frames.iter().map(|f| f.state).collect()
    }

    pub fn boxes(&self) -> Vec<RotatedBox> {
        self.frames.iter().map(|f| f.state.rotated_box()).collect()
    }

    pub fn fps(&self) -> f64 {
        if self.seconds > 0.0 {
            self.frames.len() as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }

    pub fn records(&self) -> Vec<FrameRecord> {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let b = f.state.rotated_box();
                FrameRecord {
                    frame: i,
                    cx: b.cx,
                    cy: b.cy,
                    w: b.w,
                    h: b.h,
                    rotation_deg: f.state.rotation_deg,
                    scale: f.state.scale,
                    eps: f.eps,
                    y_max: f.y_max,
                    updated: f.updated,
                }
            })
            .collect()
    }
}

/// Tracks `count` frames delivered by `load`, starting from `annotation` on
/// frame 0. A frame that fails to load aborts the run with its index.
pub fn run_sequence(
    cfg: &TrackerConfig,
    count: usize,
    mut load: impl FnMut(usize) -> Result<Image>,
    annotation: &RotatedBox,
) -> Result<RunOutput> {
    if count == 0 {
        return Err(Error::InvalidInput("sequence has no frames".into()));
    }
    let wrap = |index: usize, e: Error| match e {
        Error::Frame { .. } => e,
        other => Error::Frame { index, message: other.to_string() },
    };
    let start = Instant::now();
    let first = load(0).map_err(|e| wrap(0, e))?;
    let (mut tracker, out0) = Tracker::init(&first, annotation, cfg.clone())?;
    let mut frames = Vec::with_capacity(count);
    frames.push(out0);
    for i in 1..count {
        let frame = load(i).map_err(|e| wrap(i, e))?;
        frames.push(tracker.track_frame(&frame)?);
    }
    Ok(RunOutput {
        frames,
        counters: tracker.counters(),
        epsilon_0: tracker.controller().epsilon_0,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// [`run_sequence`] over frames already in memory.
pub fn run_frames(cfg: &TrackerConfig, frames: &[Image], annotation: &RotatedBox) -> Result<RunOutput> {
    run_sequence(cfg, frames.len(), |i| Ok(frames[i].clone()), annotation)
}
