//! Online model optimization under spatio-temporal energy control.
//!
//! The energy `eps` multiplies the peak-to-sidelobe ratio of the current score
//! map by the standardized deviation of the current peak from the recent peak
//! history. Model updates happen only on check frames whose energy stays
//! above `kappa` times the baseline `eps_0`, and each step length is the
//! smaller of `1 / eps` and the steepest-descent step of the Gauss-Newton
//! model along the gradient.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::peaks::sidelobe_stats;
use crate::tdd::ScoreMap;

pub const SIDELOBE_WINDOW: usize = 11;

/// Bounded history of peak scores plus the variance floor used when
/// standardizing against it.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyStats {
    pub history: VecDeque<f64>,
    pub capacity: usize,
    pub min_sigma: f64,
}

impl EnergyStats {
    pub fn new(capacity: usize, min_sigma: f64) -> Self {
        Self { history: VecDeque::with_capacity(capacity), capacity: capacity.max(1), min_sigma }
    }

    pub fn push(&mut self, peak: f64) {
        while self.history.len() >= self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(peak);
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Mean and standard deviation of the stored peaks.
    pub fn temporal(&self) -> (f64, f64) {
        let n = self.history.len() as f64;
        if n == 0.0 {
            return (0.0, 0.0);
        }
        let mean = self.history.iter().sum::<f64>() / n;
        let var = self.history.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
}

impl Default for EnergyStats {
    fn default() -> Self {
        Self::new(5, 1e-6)
    }
}

/// Every term of one energy evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub eps: f64,
    pub y_max: f64,
    pub mu_s: f64,
    pub sigma_s: f64,
    pub mu_t: f64,
    pub sigma_t: f64,
}

impl Energy {
    pub fn spatial(&self, min_sigma: f64) -> f64 {
        (self.y_max - self.mu_s) / self.sigma_s.max(min_sigma)
    }

    pub fn temporal(&self, min_sigma: f64) -> f64 {
        (self.y_max - self.mu_t) / self.sigma_t.max(min_sigma)
    }
}

pub fn spatiotemporal_energy(smap: &ScoreMap, stats: &EnergyStats) -> Result<Energy> {
    if stats.is_empty() {
        return Err(Error::Precondition("energy needs a non-empty peak history".into()));
    }
    let (row, col, y_max) = smap.peak;
    let (mu_s, sigma_s) = sidelobe_stats(&smap.scores, row, col, SIDELOBE_WINDOW);
    let (mu_t, sigma_t) = stats.temporal();
    let floor = stats.min_sigma;
    let eps = ((y_max - mu_s) / sigma_s.max(floor)) * ((y_max - mu_t) / sigma_t.max(floor));
    Ok(Energy { eps, y_max, mu_s, sigma_s, mu_t, sigma_t })
}

/// Exact minimizer of the local quadratic model along `-g`:
/// `alpha_s = g.g / g.(curvature g)`. A numerically flat direction falls back
/// to a unit step.
pub fn steepest_step(gradient: &[f64], curvature_apply: impl FnOnce(&[f64]) -> Vec<f64>) -> f64 {
    let gg = dot(gradient, gradient);
    let lg = curvature_apply(gradient);
    let glg = dot(gradient, &lg);
    steepest_step_from_parts(gg, glg)
}

/// [`steepest_step`] given `g.g` and `g.(curvature g)` directly.
pub fn steepest_step_from_parts(gg: f64, glg: f64) -> f64 {
    if !(glg > 1e-12 * gg) || !glg.is_finite() || gg == 0.0 {
        return 1.0;
    }
    gg / glg
}

pub fn adaptive_rate(eps: f64, alpha_s: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("adaptive rate needs positive energy, got {eps}")));
    }
    Ok((1.0 / eps).min(alpha_s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateController {
    pub kappa: f64,
    /// Baseline energy; `None` until the bootstrap window closes.
    pub epsilon_0: Option<f64>,
    pub check_period: usize,
    pub min_sigma: f64,
    pub epsilon_floor: f64,
}

impl Default for UpdateController {
    fn default() -> Self {
        Self { kappa: 0.8, epsilon_0: None, check_period: 10, min_sigma: 1e-6, epsilon_floor: 1e-6 }
    }
}

impl UpdateController {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::InvalidInput(format!("kappa {} outside (0, 1]", self.kappa)));
        }
        if self.check_period == 0 {
            return Err(Error::InvalidInput("check period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_check_frame(&self, t: usize) -> bool {
        t % self.check_period == 0
    }
}

/// Gate: a check frame with positive energy at or above `kappa * eps_0`.
pub fn should_update(t: usize, eps: f64, controller: &UpdateController) -> bool {
    let Some(eps_0) = controller.epsilon_0 else {
        return false;
    };
    controller.is_check_frame(t) && eps > 0.0 && eps >= controller.kappa * eps_0
}

/// A loss value with its gradient over one parameter partition.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossParts {
    pub fn new(value: f64, grad: Vec<f64>) -> Self {
        Self { value, grad }
    }

    pub fn zero() -> Self {
        Self::new(0.0, Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    pub grad_rs: Vec<f64>,
    pub grad_td: Vec<f64>,
}

impl CombinedLoss {
    /// Gradient over the full `[rs, td]` parameter vector.
    pub fn gradient(&self) -> Vec<f64> {
        self.grad_rs.iter().chain(&self.grad_td).copied().collect()
    }
}

/// `L = L_rs + mu * L_td`, with gradients kept per parameter partition.
pub fn combined_loss(rs: &LossParts, td: &LossParts, mu: f64) -> CombinedLoss {
    CombinedLoss {
        value: rs.value + mu * td.value,
        grad_rs: rs.grad.clone(),
        grad_td: td.grad.iter().map(|g| mu * g).collect(),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
