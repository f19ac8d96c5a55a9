use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Metric("no predictions to score".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!("{} predictions for {} truths", pred.len(), truth.len())));
    }
    Ok(())
}

/// Root mean squared difference, in cycles.
pub fn rmse_metric(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Penalty for one prediction error `delta = predicted - true`.
/// Late predictions (`delta >= 0`) grow faster than early ones.
pub fn rul_penalty(delta: f64) -> f64 {
    if delta < 0.0 {
        (-delta / 13.0).exp() - 1.0
    } else {
        (delta / 10.0).exp() - 1.0
    }
}

/// Sum of asymmetric exponential penalties over all engines.
pub fn rul_score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| rul_penalty(p - t)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub rul_score: f64,
    /// Predicted minus true lifetime per scored engine.
    pub deltas: Vec<f64>,
    pub count: usize,
}

impl MetricReport {
    pub fn new(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse_metric(pred, truth)?,
            rul_score: rul_score(pred, truth)?,
            deltas: pred.iter().zip(truth).map(|(p, t)| p - t).collect(),
            count: pred.len(),
        })
    }
}
