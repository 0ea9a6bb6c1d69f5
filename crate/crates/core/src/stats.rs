//! Small statistics helpers shared by the reward model, the agents and the evaluator.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature z-scoring: `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column statistics of `rows` (population std), std floored at `std_floor`.
    pub fn fit(rows: ArrayView2<'_, f64>, std_floor: f64) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::invalid("cannot fit normalization statistics on zero rows"));
        }
        let mean = rows.mean_axis(Axis(0)).expect("non-empty");
        let std = rows.std_axis(Axis(0), 0.0);
        Ok(Self {
            mean: mean.to_vec(),
            std: std.iter().map(|&s| s.max(std_floor)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn apply(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = rows.to_owned();
        for mut row in out.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[i]) / self.std[i];
            }
        }
        out
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation; 0 for a single value.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Pearson correlation. Returns `(0.0, true)` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> (f64, bool) {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return (0.0, true);
    }
    ((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0), false)
}
