//! Batch-mean regression losses returning the loss and its gradient with respect to the predictions.

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid("loss needs at least one prediction"));
    }
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "prediction length {} does not match target length {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// Mean squared error. `grad[i] = 2 (pred[i] − target[i]) / N`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Asymmetric squared loss `mean(|tau − 1[u < 0]| · u²)` with `u = target − pred`.
///
/// At `tau = 0.5` this is exactly half the MSE; as `tau → 1` the minimizer
/// approaches the maximum of the targets.
pub fn expectile_loss(pred: &[f64], target: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("expectile tau must lie in (0, 1), got {tau}")));
    }
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let u = t - p;
            let w = expectile_weight(u, tau);
            loss += w * u * u;
            -2.0 * w * u / n
        })
        .collect();
    Ok((loss / n, grad))
}

#[inline]
pub fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}
