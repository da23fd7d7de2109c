use serde::{Deserialize, Serialize};

use super::loss::{loss_mae, loss_mse, ssim, SsimConfig};
use crate::error::{invalid, Result};
use crate::tensor::{RealGrid, Scalar};

/// `1 − Σ(ŷ−y)² / Σ(y−ȳ)²`, pooled over every sample.
pub fn r2_score<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>) -> Result<f64> {
    let sse = loss_mse(pred, target)? * pred.len() as f64;
    let n = target.len() as f64;
    let mean = target.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let sst: f64 = target.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum();
    if sst == 0.0 {
        return invalid("R² is undefined for a constant target");
    }
    Ok(1.0 - sse / sst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
    pub r2: f64,
}

impl MetricsRecord {
    /// Metrics of a stacked prediction against its target; SSIM uses the
    /// target's own dynamic range unless `cfg` fixes one.
    pub fn compute<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>, cfg: &SsimConfig) -> Result<Self> {
        Ok(Self {
            mae: loss_mae(pred, target)?,
            mse: loss_mse(pred, target)?,
            ssim: ssim(pred, target, cfg)?,
            r2: r2_score(pred, target)?,
        })
    }
}

/// One line of a method × noise-level comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub snr: String,
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
    pub r2: f64,
}

impl ComparisonRow {
    pub fn new(method: impl Into<String>, snr: impl Into<String>, m: &MetricsRecord) -> Self {
        Self {
            method: method.into(),
            snr: snr.into(),
            mae: m.mae,
            mse: m.mse,
            ssim: m.ssim,
            r2: m.r2,
        }
    }
}

/// Fixed-width text rendering, rows grouped by noise level.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{:<12} {:<14} {:>8} {:>8} {:>8} {:>8}\n", "noise", "method", "MAE", "MSE", "SSIM", "R2");
    let mut levels: Vec<&str> = Vec::new();
    for r in rows {
        if !levels.contains(&r.snr.as_str()) {
            levels.push(&r.snr);
        }
    }
    for level in levels {
        for r in rows.iter().filter(|r| r.snr == level) {
            out += &format!(
                "{:<12} {:<14} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
                r.snr, r.method, r.mae, r.mse, r.ssim, r.r2
            );
        }
    }
    out
}
