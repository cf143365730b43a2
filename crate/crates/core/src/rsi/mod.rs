//! Rotation/scale estimation between a template patch and a candidate patch.
//!
//! Two routes share one output type: the analytic Fourier-Mellin registration
//! in [`analytic`] and the learned three-stage convolutional regressor in
//! [`regressor`], trained by [`train`].

pub mod analytic;
pub mod checkpoint;
pub mod regressor;
pub mod train;

pub use analytic::{estimate_analytic, AnalyticEstimator};
pub use regressor::{
    pair_features, regressor_forward, rsi_loss, rsi_residual, PreparedPair, RegressorGrads, RsiRegressor,
    RsiTrainingPair,
};
pub use train::{train_rsi, TrainConfig, TrainReport};

use crate::logpolar::wrap_degrees;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationScaleEstimate {
    pub scale: f64,
    /// Degrees in `(-180, 180]`.
    pub rotation_deg: f64,
    pub confidence: f64,
}

impl RotationScaleEstimate {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation_deg: 0.0, confidence: 0.0 }
    }

    pub fn new(scale: f64, rotation_deg: f64, confidence: f64) -> Self {
        Self { scale, rotation_deg: wrap_degrees(rotation_deg), confidence }
    }

    pub fn is_valid(&self) -> bool {
        self.scale.is_finite()
            && self.scale > 0.0
            && self.rotation_deg > -180.0
            && self.rotation_deg <= 180.0
            && self.confidence >= 0.0
    }
}
