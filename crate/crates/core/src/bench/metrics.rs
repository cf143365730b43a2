//! Benchmark metrics: center-error precision, overlap success, accuracy and
//! failure counts.

use crate::bench::iou::{rotated_iou, RotatedBox};
use crate::error::{Error, Result};

pub const PRECISION_THRESHOLD_PX: f64 = 20.0;

/// Center-error thresholds 0, 1, ..., 50 px.
pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(f64::from).collect()
}

/// Overlap thresholds 0, 0.01, ..., 1.
pub fn success_thresholds() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("{a} predictions against {b} ground-truth entries")));
    }
    Ok(())
}

pub fn center_errors(pred: &[(f64, f64)], gt: &[(f64, f64)]) -> Result<Vec<f64>> {
    check_lengths(pred.len(), gt.len())?;
    Ok(pred.iter().zip(gt).map(|(p, g)| ((p.0 - g.0).powi(2) + (p.1 - g.1).powi(2)).sqrt()).collect())
}

/// Fraction of frames with center error at most each threshold.
pub fn precision_curve(pred: &[(f64, f64)], gt: &[(f64, f64)], thresholds: &[f64]) -> Result<Vec<f64>> {
    let errors = center_errors(pred, gt)?;
    let n = errors.len().max(1) as f64;
    Ok(thresholds.iter().map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n).collect())
}

pub fn precision_at(pred: &[(f64, f64)], gt: &[(f64, f64)], threshold: f64) -> Result<f64> {
    Ok(precision_curve(pred, gt, &[threshold])?[0])
}

pub fn overlaps(pred: &[RotatedBox], gt: &[RotatedBox]) -> Result<Vec<f64>> {
    check_lengths(pred.len(), gt.len())?;
    Ok(pred.iter().zip(gt).map(|(p, g)| rotated_iou(p, g)).collect())
}

/// Fraction of frames whose overlap strictly exceeds each threshold.
pub fn success_curve(ious: &[f64], thresholds: &[f64]) -> Vec<f64> {
    let n = ious.len().max(1) as f64;
    thresholds.iter().map(|&t| ious.iter().filter(|&&v| v > t).count() as f64 / n).collect()
}

/// Mean of the success curve over the 101-point overlap grid.
pub fn success_auc(pred: &[RotatedBox], gt: &[RotatedBox]) -> Result<(f64, Vec<f64>)> {
    let curve = success_curve(&overlaps(pred, gt)?, &success_thresholds());
    let auc = curve.iter().sum::<f64>() / curve.len() as f64;
    Ok((auc, curve))
}

/// Mean overlap over frames that still touch the target.
pub fn accuracy(ious: &[f64]) -> f64 {
    let hits: Vec<f64> = ious.iter().copied().filter(|&v| v > 0.0).collect();
    if hits.is_empty() {
        0.0
    } else {
        hits.iter().sum::<f64>() / hits.len() as f64
    }
}

/// Number of distinct zero-overlap episodes (consecutive zero frames count
/// once; there is no reinitialization).
pub fn failure_count(ious: &[f64]) -> usize {
    let mut count = 0;
    let mut lost = false;
    for &v in ious {
        let zero = v <= 0.0;
        if zero && !lost {
            count += 1;
        }
        lost = zero;
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub frames: usize,
    pub precision_at_20: f64,
    pub precision_curve: Vec<f64>,
    pub success_auc: f64,
    pub success_curve: Vec<f64>,
    pub mean_iou: f64,
    pub accuracy: f64,
    pub failures: usize,
    pub fps: Option<f64>,
}

impl MetricReport {
    pub fn compute(pred: &[RotatedBox], gt: &[RotatedBox], fps: Option<f64>) -> Result<Self> {
        let ious = overlaps(pred, gt)?;
        let pc: Vec<(f64, f64)> = pred.iter().map(|b| (b.cx, b.cy)).collect();
        let gc: Vec<(f64, f64)> = gt.iter().map(|b| (b.cx, b.cy)).collect();
        let precision_curve = precision_curve(&pc, &gc, &precision_thresholds())?;
        let success_curve = success_curve(&ious, &success_thresholds());
        Ok(Self {
            frames: ious.len(),
            precision_at_20: precision_curve[PRECISION_THRESHOLD_PX as usize],
            success_auc: success_curve.iter().sum::<f64>() / success_curve.len() as f64,
            precision_curve,
            success_curve,
            mean_iou: ious.iter().sum::<f64>() / ious.len().max(1) as f64,
            accuracy: accuracy(&ious),
            failures: failure_count(&ious),
            fps,
        })
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "frames {}\nprecision@20px {:.4}\nsuccess AUC {:.4}\nmean IoU {:.4}\naccuracy {:.4}\nfailures {}",
            self.frames, self.precision_at_20, self.success_auc, self.mean_iou, self.accuracy, self.failures
        );
        if let Some(fps) = self.fps {
            s.push_str(&format!("\nfps {fps:.1}"));
        }
        s
    }
}
