//! Mini-batch Adam training for the rotation/scale regressor with stepwise
//! learning-rate decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rsi::regressor::{rsi_loss, rsi_loss_value, PreparedPair, RsiRegressor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-2,
            decay: 0.2,
            decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::InvalidInput("epochs, batch size and decay period must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "learning rate {} / decay {} out of range",
                self.learning_rate, self.decay
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub regressor: RsiRegressor,
    /// Full-set loss before the first update.
    pub initial_loss: f64,
    /// Full-set loss after each epoch.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.initial_loss)
    }

    /// `epoch,loss` lines with a header; epoch 0 is the initial loss.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        out.push_str(&format!("0,{}\n", self.initial_loss));
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i + 1, l));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains `init` on `pairs`. A non-finite loss at any point aborts with
/// [`Error::Divergence`].
pub fn train_rsi(init: RsiRegressor, pairs: &[PreparedPair], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no training pairs".into()));
    }
    let mut reg = init;
    let initial_loss = rsi_loss_value(&reg, pairs)?;
    if !initial_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, loss: initial_loss });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut params = reg.params();
    let mut adam = Adam::new(params.len());
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PreparedPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let loss = rsi_loss(&reg, &batch)?;
            if !loss.value.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, loss: loss.value });
            }
            adam.step(&mut params, &loss.grads.params(), lr, cfg);
            reg.set_params(&params);
        }
        let loss = rsi_loss_value(&reg, pairs)?;
        if !loss.is_finite() || !reg.is_finite() {
            return Err(Error::Divergence { epoch: epoch + 1, loss });
        }
        losses.push(loss);
    }
    Ok(TrainReport { regressor: reg, initial_loss, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule() {
        let cfg = TrainConfig { learning_rate: 1.0, ..Default::default() };
        assert_eq!(cfg.learning_rate_at(0), 1.0);
        assert_eq!(cfg.learning_rate_at(9), 1.0);
        assert!((cfg.learning_rate_at(10) - 0.2).abs() < 1e-15);
        assert!((cfg.learning_rate_at(25) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { decay: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
