//! Per-dimension-averaged coefficient of determination and relative improvement.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SplitKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    pub per_dim: Vec<f64>,
    pub mean: f64,
    pub split: Option<SplitKind>,
    pub n: usize,
}

/// R² of each column of `targets` against `predictions` (both N×K), and their mean.
///
/// Each column is scored as `1 - SS_res / SS_tot`; the report mean weights
/// every column equally.
pub fn r_squared(predictions: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<R2Report> {
    if predictions.dim() != targets.dim() {
        return Err(Error::Dimension(format!(
            "predictions {:?} vs targets {:?}",
            predictions.dim(),
            targets.dim()
        )));
    }
    let (n, k) = targets.dim();
    if n < 2 || k == 0 {
        return Err(Error::Dimension(format!(
            "R² needs at least 2 rows and 1 column, got {n}x{k}"
        )));
    }
    let per_dim = (0..k)
        .map(|i| {
            let t = targets.column(i);
            let p = predictions.column(i);
            let mean = column_mean(t.iter().copied());
            let ss_tot: f64 = t.iter().map(|v| (v - mean) * (v - mean)).sum();
            if !(ss_tot > 0.0) {
                return Err(Error::ZeroVariance(format!("target column {i}")));
            }
            let ss_res: f64 = t.iter().zip(p).map(|(v, q)| (v - q) * (v - q)).sum();
            Ok(1.0 - ss_res / ss_tot)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_dim.iter().sum::<f64>() / k as f64;
    Ok(R2Report {
        per_dim,
        mean,
        split: None,
        n,
    })
}

/// Arithmetic mean in iteration order; shared with callers that need the
/// exact same value (e.g. a mean predictor).
pub fn column_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Relative improvement in percent; `None` when the baseline is not positive.
pub fn relative_improvement(r2_transfer: f64, r2_non_transfer: f64) -> Option<f64> {
    if r2_non_transfer > 0.0 && r2_transfer.is_finite() {
        Some((r2_transfer - r2_non_transfer) / r2_non_transfer * 100.0)
    } else {
        None
    }
}
