use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::RealGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScheme {
    Identity,
    /// Affine map of `[min, max]` onto `[−1, 1]`.
    MinmaxSym,
    /// Zero mean, unit population standard deviation.
    Zscore,
    /// Division by `max |x|`; keeps zero at zero.
    MaxAbs,
}

/// Everything needed to undo a normalization exactly.
///
/// `a`/`b` are `(min, max)` for `minmax_sym`, `(mean, std)` for `zscore` and
/// `(0, max |x|)` for `max_abs`. `degenerate` marks a constant input, which
/// normalizes to all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scheme: NormScheme,
    pub a: f64,
    pub b: f64,
    pub degenerate: bool,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { scheme: NormScheme::Identity, a: 0.0, b: 1.0, degenerate: false };

    pub fn fit(data: &[f64], scheme: NormScheme) -> Result<Self> {
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cannot normalize data containing {bad}")));
        }
        if data.is_empty() && scheme != NormScheme::Identity {
            return invalid("cannot fit normalization statistics to empty data");
        }
        let stats = match scheme {
            NormScheme::Identity => Self::IDENTITY,
            NormScheme::MinmaxSym => {
                let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                NormStats { scheme, a: lo, b: hi, degenerate: hi == lo }
            }
            NormScheme::Zscore => {
                let n = data.len() as f64;
                let mean = data.iter().sum::<f64>() / n;
                let std = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if std == 0.0 {
                    return invalid("zscore needs a non-constant input");
                }
                NormStats { scheme, a: mean, b: std, degenerate: false }
            }
            NormScheme::MaxAbs => {
                let m = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                NormStats { scheme, a: 0.0, b: m, degenerate: m == 0.0 }
            }
        };
        Ok(stats)
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        match self.scheme {
            NormScheme::Identity => v,
            NormScheme::MinmaxSym => 2.0 * (v - self.a) / (self.b - self.a) - 1.0,
            NormScheme::Zscore => (v - self.a) / self.b,
            NormScheme::MaxAbs => v / self.b,
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        if self.degenerate {
            return self.a;
        }
        match self.scheme {
            NormScheme::Identity => y,
            NormScheme::MinmaxSym => (y + 1.0) * 0.5 * (self.b - self.a) + self.a,
            NormScheme::Zscore => y * self.b + self.a,
            NormScheme::MaxAbs => y * self.b,
        }
    }
}

pub fn normalize(grid: &RealGrid<f64>, scheme: NormScheme) -> Result<(RealGrid<f64>, NormStats)> {
    let stats = NormStats::fit(grid.data(), scheme)?;
    Ok((normalize_with(grid, &stats), stats))
}

/// Applies previously fitted statistics (e.g. dataset-wide ones).
pub fn normalize_with(grid: &RealGrid<f64>, stats: &NormStats) -> RealGrid<f64> {
    grid.map(|v| stats.apply(v))
}

pub fn denormalize(grid: &RealGrid<f64>, stats: &NormStats) -> RealGrid<f64> {
    grid.map(|v| stats.invert(v))
}
