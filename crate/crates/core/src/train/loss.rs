use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{PairLoss, RealGrid, Scalar};

/// Structural similarity settings. Windows are uniform squares evaluated at
/// every fully-contained position ("valid" placement).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window: usize,
    /// Dynamic range `L`. `None` takes `max − min` of the target passed in
    /// (a batch during training, the whole set during evaluation).
    pub dynamic_range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            dynamic_range: None,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return invalid(format!("SSIM window {} must be odd", self.window));
        }
        if let Some(l) = self.dynamic_range {
            if !(l > 0.0 && l.is_finite()) {
                return invalid(format!("SSIM dynamic range {l} must be positive"));
            }
        }
        Ok(())
    }

    /// `L` for a given target; a constant target falls back to 1.
    pub fn range_for<T: Scalar>(&self, target: &RealGrid<T>) -> f64 {
        if let Some(l) = self.dynamic_range {
            return l;
        }
        let (lo, hi) = target
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.as_f64()), hi.max(v.as_f64())));
        let l = hi - lo;
        if l > 0.0 && l.is_finite() {
            l
        } else {
            1.0
        }
    }

    pub fn constants(l: f64) -> (f64, f64) {
        ((0.01 * l).powi(2), (0.03 * l).powi(2))
    }
}

/// Weights of the mixed objective `w_mse·MSE + w_ssim·(1 − SSIM) + w_mae·MAE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mse: f64,
    pub ssim: f64,
    pub mae: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mse: 0.5,
            ssim: 0.5,
            mae: 0.0,
        }
    }
}

impl LossWeights {
    pub const MSE: LossWeights = LossWeights { mse: 1.0, ssim: 0.0, mae: 0.0 };
    pub const SSIM: LossWeights = LossWeights { mse: 0.0, ssim: 1.0, mae: 0.0 };
    pub const MAE: LossWeights = LossWeights { mse: 0.0, ssim: 0.0, mae: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let w = [self.mse, self.ssim, self.mae];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return invalid(format!("loss weights {w:?} must be finite and non-negative"));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid(format!("loss weights {w:?} must sum to 1"));
        }
        Ok(())
    }
}

fn check_pair<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>) -> Result<()> {
    if pred.dims() != target.dims() {
        return shape_err(format!("prediction {:?} vs target {:?}", pred.dims(), target.dims()));
    }
    if pred.is_empty() {
        return invalid("empty prediction");
    }
    Ok(())
}

pub fn loss_mae<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>) -> Result<f64> {
    check_pair(pred, target)?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum();
    Ok(s / pred.len() as f64)
}

pub fn loss_mse<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>) -> Result<f64> {
    check_pair(pred, target)?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

/// Planes of an `(…, H, W, C)` grid as `(H, W, C, planes)`.
fn planes(dims: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if dims.len() < 3 {
        return shape_err(format!("SSIM needs (…, H, W, C) grids, got {dims:?}"));
    }
    let r = dims.len();
    let (h, w, c) = (dims[r - 3], dims[r - 2], dims[r - 1]);
    Ok((h, w, c, dims[..r - 3].iter().product::<usize>() * c))
}

/// Sums over every `win × win` window fully inside the `h × w` plane.
fn box_sums(p: &[f64], h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h + 1 - win, w + 1 - win);
    let mut rows = vec![0.0; h * ow];
    for t in 0..h {
        for j in 0..ow {
            rows[t * ow + j] = p[t * w + j..t * w + j + win].iter().sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (i..i + win).map(|t| rows[t * ow + j]).sum();
        }
    }
    out
}

/// Adjoint of [`box_sums`]: each pixel collects the values of the windows covering it.
fn spread(coef: &[f64], h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h + 1 - win, w + 1 - win);
    let mut cols = vec![0.0; h * ow];
    for t in 0..h {
        let lo = t.saturating_sub(win - 1);
        let hi = t.min(oh - 1);
        for j in 0..ow {
            cols[t * ow + j] = (lo..=hi).map(|i| coef[i * ow + j]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for t in 0..h {
        for s in 0..w {
            let lo = s.saturating_sub(win - 1);
            let hi = s.min(ow - 1);
            out[t * w + s] = cols[t * ow + lo..=t * ow + hi].iter().sum();
        }
    }
    out
}

struct SsimPass {
    value: f64,
    grad_pred: Vec<f64>,
    grad_target: Vec<f64>,
}

fn ssim_pass<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>, cfg: &SsimConfig, l: f64, want_grad: bool) -> Result<SsimPass> {
    check_pair(pred, target)?;
    cfg.validate()?;
    let (h, w, c, n_planes) = planes(pred.dims())?;
    let win = cfg.window;
    if win > h || win > w {
        return invalid(format!("SSIM window {win} larger than the {h}×{w} image"));
    }
    let (c1, c2) = SsimConfig::constants(l);
    let m = (win * win) as f64;
    let windows = (h + 1 - win) * (w + 1 - win);
    let total = (windows * n_planes) as f64;
    let mut value = 0.0;
    let mut gp = if want_grad { vec![0.0; pred.len()] } else { Vec::new() };
    let mut gt = gp.clone();
    let batch = n_planes / c;
    for b in 0..batch {
        for ch in 0..c {
            let at = |i: usize| (b * h * w + i) * c + ch;
            let x: Vec<f64> = (0..h * w).map(|i| pred.data()[at(i)].as_f64()).collect();
            let y: Vec<f64> = (0..h * w).map(|i| target.data()[at(i)].as_f64()).collect();
            let prod = |f: &dyn Fn(usize) -> f64| box_sums(&(0..h * w).map(f).collect::<Vec<_>>(), h, w, win);
            let sx = box_sums(&x, h, w, win);
            let sy = box_sums(&y, h, w, win);
            let sxx = prod(&|i| x[i] * x[i]);
            let syy = prod(&|i| y[i] * y[i]);
            let sxy = prod(&|i| x[i] * y[i]);
            let mut alpha_x = vec![0.0; windows];
            let mut alpha_y = vec![0.0; windows];
            let mut beta = vec![0.0; windows];
            let mut gamma = vec![0.0; windows];
            for k in 0..windows {
                let (mx, my) = (sx[k] / m, sy[k] / m);
                let vx = sxx[k] / m - mx * mx;
                let vy = syy[k] / m - my * my;
                let cov = sxy[k] / m - mx * my;
                let a = 2.0 * mx * my + c1;
                let bb = 2.0 * cov + c2;
                let cc = mx * mx + my * my + c1;
                let d = vx + vy + c2;
                let s = a * bb / (cc * d);
                value += s;
                if want_grad {
                    beta[k] = a / (cc * d);
                    gamma[k] = s / d;
                    let common = bb / (cc * d);
                    alpha_x[k] = my * common - my * beta[k] - mx * s / cc + mx * gamma[k];
                    alpha_y[k] = mx * common - mx * beta[k] - my * s / cc + my * gamma[k];
                }
            }
            if want_grad {
                let (ax, ay) = (spread(&alpha_x, h, w, win), spread(&alpha_y, h, w, win));
                let (sb, sg) = (spread(&beta, h, w, win), spread(&gamma, h, w, win));
                let k = 2.0 / (m * total);
                for i in 0..h * w {
                    gp[at(i)] = k * (ax[i] + y[i] * sb[i] - x[i] * sg[i]);
                    gt[at(i)] = k * (ay[i] + x[i] * sb[i] - y[i] * sg[i]);
                }
            }
        }
    }
    Ok(SsimPass {
        value: value / total,
        grad_pred: gp,
        grad_target: gt,
    })
}

/// Mean structural similarity over all windows, channels and batch items.
pub fn ssim<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_pass(pred, target, cfg, cfg.range_for(target), false)?.value)
}

pub fn loss_ssim<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>, cfg: &SsimConfig) -> Result<f64> {
    Ok(1.0 - ssim(pred, target, cfg)?)
}

/// Gradients of `1 − SSIM` with respect to prediction and target. With an
/// automatic dynamic range, `L` is treated as a constant.
pub fn loss_ssim_grad<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>, cfg: &SsimConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = ssim_pass(pred, target, cfg, cfg.range_for(target), true)?;
    Ok((p.grad_pred.iter().map(|v| -v).collect(), p.grad_target.iter().map(|v| -v).collect()))
}

pub fn mixed_loss<T: Scalar>(pred: &RealGrid<T>, target: &RealGrid<T>, weights: &LossWeights, cfg: &SsimConfig) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    if weights.mse > 0.0 {
        total += weights.mse * loss_mse(pred, target)?;
    }
    if weights.mae > 0.0 {
        total += weights.mae * loss_mae(pred, target)?;
    }
    if weights.ssim > 0.0 {
        total += weights.ssim * loss_ssim(pred, target, cfg)?;
    }
    Ok(total)
}

/// The mixed objective as a graph loss node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedLoss {
    pub weights: LossWeights,
    pub ssim: SsimConfig,
}

impl<T: Scalar> PairLoss<T> for MixedLoss {
    fn name(&self) -> &'static str {
        "mixed"
    }

    fn value(&self, pred: &RealGrid<T>, target: &RealGrid<T>) -> Result<T> {
        Ok(T::lit(mixed_loss(pred, target, &self.weights, &self.ssim)?))
    }

    fn grad(&self, pred: &RealGrid<T>, target: &RealGrid<T>) -> (Vec<T>, Vec<T>) {
        // Shapes were validated by `value` in the forward pass.
        let n = pred.len() as f64;
        let w = &self.weights;
        let mut gp = vec![0.0; pred.len()];
        for (i, (a, b)) in pred.data().iter().zip(target.data()).enumerate() {
            let d = a.as_f64() - b.as_f64();
            let sign = if d == 0.0 { 0.0 } else { d.signum() };
            gp[i] = (w.mse * 2.0 * d + w.mae * sign) / n;
        }
        let mut gt: Vec<f64> = gp.iter().map(|v| -v).collect();
        if w.ssim > 0.0 {
            let (sp, st) = loss_ssim_grad(pred, target, &self.ssim).expect("validated in forward");
            for i in 0..gp.len() {
                gp[i] += w.ssim * sp[i];
                gt[i] += w.ssim * st[i];
            }
        }
        (gp.into_iter().map(T::lit).collect(), gt.into_iter().map(T::lit).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sum_and_spread_are_adjoint() {
        let (h, w, win) = (7, 9, 3);
        let p: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let q: Vec<f64> = (0..(h - 2) * (w - 2)).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = box_sums(&p, h, w, win).iter().zip(&q).map(|(a, b)| a * b).sum();
        let rhs: f64 = spread(&q, h, w, win).iter().zip(&p).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { mse: 0.5, ssim: 0.2, mae: 0.0 }.validate().is_err());
        assert!(LossWeights { mse: 1.5, ssim: -0.5, mae: 0.0 }.validate().is_err());
        assert!(SsimConfig { window: 4, ..SsimConfig::default() }.validate().is_err());
    }
}
