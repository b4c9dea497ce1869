//! Angular error metrics in degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GazeAngles;

/// Absolute error of one estimate, per axis, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleError {
    pub yaw: f64,
    pub pitch: f64,
}

impl SampleError {
    pub fn between(pred: GazeAngles, gt: GazeAngles) -> Self {
        Self {
            yaw: (pred.yaw_deg - gt.yaw_deg).abs(),
            pitch: (pred.pitch_deg - gt.pitch_deg).abs(),
        }
    }

    /// Mean of the two axis errors.
    pub fn mean(&self) -> f64 {
        0.5 * (self.yaw + self.pitch)
    }
}

/// Mean absolute error and spread, per axis and averaged over axes.
///
/// Standard deviations are population deviations over the per-sample values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mae_yaw: f64,
    pub mae_pitch: f64,
    pub mae_mean: f64,
    pub std_yaw: f64,
    pub std_pitch: f64,
    pub std_mean: f64,
    pub n: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ErrorStats {
    pub fn from_errors(errors: &[SampleError]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::invalid("no samples to summarize"));
        }
        let (mae_yaw, std_yaw) = mean_std(errors.iter().map(|e| e.yaw));
        let (mae_pitch, std_pitch) = mean_std(errors.iter().map(|e| e.pitch));
        let (_, std_mean) = mean_std(errors.iter().map(|e| e.mean()));
        Ok(Self {
            mae_yaw,
            mae_pitch,
            // exact average of the axis means; equal to the per-sample mean
            // up to rounding
            mae_mean: 0.5 * (mae_yaw + mae_pitch),
            std_yaw,
            std_pitch,
            std_mean,
            n: errors.len(),
        })
    }
}

pub fn sample_errors(preds: &[GazeAngles], gts: &[GazeAngles]) -> Result<Vec<SampleError>> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "predictions ({}) and ground truth ({}) must be equal-length and non-empty",
            preds.len(),
            gts.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(gts)
        .map(|(p, g)| SampleError::between(*p, *g))
        .collect())
}

pub fn mae(preds: &[GazeAngles], gts: &[GazeAngles]) -> Result<ErrorStats> {
    ErrorStats::from_errors(&sample_errors(preds, gts)?)
}

/// Percentage reduction of `other` relative to `base`.
pub fn relative_improvement(base: f64, other: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::invalid(format!("baseline error must be positive, got {base}")));
    }
    Ok(100.0 * (base - other) / base)
}
