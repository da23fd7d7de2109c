//! L1-regularized sparse-spike deconvolution, solved trace by trace.
//!
//! Minimizes `‖d − Gm‖² + χ‖m‖₁`, where `G` is the `same`-cropped wavelet
//! convolution, by proximal gradient (ISTA) or its accelerated form (FISTA).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::seismic::{from_traces, trace, ReflectivitySection, TraceSection, Wavelet};
use crate::tensor::RngState;

/// The Toeplitz map `m ↦ w ∗ m` cropped to the input length, peak-aligned.
#[derive(Debug, Clone)]
pub struct ConvOperator {
    wavelet: Wavelet,
    length: usize,
}

impl ConvOperator {
    pub fn new(wavelet: Wavelet, length: usize) -> Self {
        Self { wavelet, length }
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn wavelet(&self) -> &Wavelet {
        &self.wavelet
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.length {
            return shape_err(format!("operator of length {} applied to {} samples", self.length, x.len()));
        }
        Ok(())
    }

    /// `y[t] = Σ_k m[k]·w[t − k + c]`.
    pub fn apply(&self, m: &[f64]) -> Result<Vec<f64>> {
        self.check(m)?;
        let mut y = vec![0.0; self.length];
        self.apply_into(m, &mut y);
        Ok(y)
    }

    /// `x[k] = Σ_t y[t]·w[t − k + c]`.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        let mut x = vec![0.0; self.length];
        self.adjoint_into(y, &mut x);
        Ok(x)
    }

    fn apply_into(&self, m: &[f64], y: &mut [f64]) {
        let n = self.length as isize;
        let c = self.wavelet.center() as isize;
        y.iter_mut().for_each(|v| *v = 0.0);
        for (k, &mk) in m.iter().enumerate() {
            if mk == 0.0 {
                continue;
            }
            let lo = (c - k as isize).max(0) as usize;
            let hi = ((n - k as isize + c).min(self.wavelet.len() as isize)).max(0) as usize;
            for j in lo..hi {
                y[(k as isize + j as isize - c) as usize] += mk * self.wavelet.samples[j];
            }
        }
    }

    fn adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        let n = self.length as isize;
        let c = self.wavelet.center() as isize;
        for (k, xk) in x.iter_mut().enumerate() {
            let lo = (c - k as isize).max(0) as usize;
            let hi = ((n - k as isize + c).min(self.wavelet.len() as isize)).max(0) as usize;
            let mut s = 0.0;
            for j in lo..hi {
                s += y[(k as isize + j as isize - c) as usize] * self.wavelet.samples[j];
            }
            *xk = s;
        }
    }

    /// Power-iteration estimate of `‖G‖² = λ_max(GᵀG)` from a fixed random start.
    pub fn norm_sq_estimate(&self, iterations: usize) -> f64 {
        if self.length == 0 {
            return 0.0;
        }
        let mut rng = RngState::new(0x5eed);
        let mut v: Vec<f64> = (0..self.length).map(|_| rng.normal()).collect();
        let mut gv = vec![0.0; self.length];
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            self.apply_into(&v, &mut gv);
            let mut w = vec![0.0; self.length];
            self.adjoint_into(&gv, &mut w);
            lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            v = w;
        }
        lambda
    }
}

/// Step size rule: a fixed value or `1/(safety·‖G‖²)` from power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Step {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

impl Step {
    pub const AUTO: Step = Step::Auto(AutoTag::Auto);
}

/// How `chi` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiMode {
    /// `χ` is used as given.
    Absolute,
    /// `χ` is a factor on `‖Gᵀd‖∞` of each trace.
    RelativeToData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Ista,
    Fista,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpiConfig {
    pub chi: f64,
    pub chi_mode: ChiMode,
    pub max_iters: usize,
    /// Coefficient on `Gᵀ(d − Gm)` in the gradient step.
    pub step: Step,
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    pub solver: Solver,
    pub power_iterations: usize,
    /// Multiplier on the power-iteration estimate of `‖G‖²`.
    pub step_safety: f64,
}

impl Default for BpiConfig {
    fn default() -> Self {
        Self {
            chi: 1e-2,
            chi_mode: ChiMode::RelativeToData,
            max_iters: 2000,
            step: Step::AUTO,
            tol: 1e-10,
            solver: Solver::Ista,
            power_iterations: 20,
            step_safety: 1.05,
        }
    }
}

impl BpiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return invalid(format!("chi must be finite and non-negative, got {}", self.chi));
        }
        if let Step::Fixed(s) = self.step {
            if !(s > 0.0) || !s.is_finite() {
                return invalid(format!("step must be positive, got {s}"));
            }
        }
        if !(self.tol >= 0.0) {
            return invalid(format!("tol must be non-negative, got {}", self.tol));
        }
        if !(self.step_safety >= 1.0) {
            return invalid(format!("step_safety must be at least 1, got {}", self.step_safety));
        }
        Ok(())
    }

    /// Absolute `χ` for data `d`.
    pub fn chi_for(&self, op: &ConvOperator, d: &[f64]) -> Result<f64> {
        Ok(match self.chi_mode {
            ChiMode::Absolute => self.chi,
            ChiMode::RelativeToData => {
                self.chi * op.apply_adjoint(d)?.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            }
        })
    }

    /// Gradient-step size for `op`.
    pub fn step_for(&self, op: &ConvOperator) -> f64 {
        match self.step {
            Step::Fixed(s) => s,
            Step::Auto(_) => {
                let l = op.norm_sq_estimate(self.power_iterations) * self.step_safety;
                if l > 0.0 {
                    1.0 / l
                } else {
                    1.0
                }
            }
        }
    }
}

/// `sign(x)·max(|x| − τ, 0)`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// `‖d − Gm‖² + χ‖m‖₁`.
pub fn objective(m: &[f64], d: &[f64], op: &ConvOperator, chi: f64) -> Result<f64> {
    if d.len() != op.len() {
        return shape_err(format!("data of length {} for operator of length {}", d.len(), op.len()));
    }
    let gm = op.apply(m)?;
    let misfit: f64 = d.iter().zip(&gm).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(misfit + chi * m.iter().map(|v| v.abs()).sum::<f64>())
}

/// Result of one trace inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub m: Vec<f64>,
    /// Objective after each iteration.
    pub history: Vec<f64>,
    /// Absolute `χ` used.
    pub chi: f64,
    pub step: f64,
}

fn l1(m: &[f64]) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

fn sq_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// `out = soft(z + t·Gᵀres, t·χ/2)` where `res = d − Gz`. The halved
/// threshold matches the objective's unscaled misfit, whose gradient is
/// `2Gᵀ(Gm − d)`.
fn prox_step(op: &ConvOperator, z: &[f64], res: &[f64], step: f64, chi: f64, grad: &mut [f64], out: &mut [f64]) {
    op.adjoint_into(res, grad);
    let tau = 0.5 * step * chi;
    for ((o, zi), gi) in out.iter_mut().zip(z).zip(grad.iter()) {
        *o = soft_threshold(zi + step * gi, tau);
    }
}

fn converged(prev: f64, cur: f64, tol: f64) -> bool {
    let scale = prev.abs().max(f64::MIN_POSITIVE);
    (prev - cur).abs() < tol * scale || cur == 0.0
}

fn setup(d: &[f64], op: &ConvOperator, cfg: &BpiConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if d.len() != op.len() {
        return shape_err(format!("data of length {} for operator of length {}", d.len(), op.len()));
    }
    if let Some(bad) = d.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observed data contains {bad}")));
    }
    Ok((cfg.chi_for(op, d)?, cfg.step_for(op)))
}

/// Iterative soft thresholding. The objective history is non-increasing;
/// a rise beyond floating-point slack is reported as divergence.
pub fn ista_solve(d: &[f64], op: &ConvOperator, cfg: &BpiConfig) -> Result<Solution> {
    let (chi, step) = setup(d, op, cfg)?;
    let n = op.len();
    let mut m = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut res = d.to_vec();
    let mut prev = sq_norm(&res);
    let mut history = Vec::new();
    for it in 0..cfg.max_iters {
        prox_step(op, &m, &res, step, chi, &mut grad, &mut next);
        std::mem::swap(&mut m, &mut next);
        op.apply_into(&m, &mut gm);
        for ((r, di), g) in res.iter_mut().zip(d).zip(&gm) {
            *r = di - g;
        }
        let cur = sq_norm(&res) + chi * l1(&m);
        if !cur.is_finite() || cur > prev + 1e-12 * prev.abs().max(1e-300) {
            return Err(Error::Divergence { iteration: it + 1, previous: prev, current: cur });
        }
        history.push(cur);
        if converged(prev, cur, cfg.tol) {
            break;
        }
        prev = cur;
    }
    Ok(Solution { m, history, chi, step })
}

/// Accelerated proximal gradient with Nesterov momentum. The history is not
/// monotone in general; non-finite objectives or growth far above the
/// starting objective count as divergence.
pub fn fista_solve(d: &[f64], op: &ConvOperator, cfg: &BpiConfig) -> Result<Solution> {
    let (chi, step) = setup(d, op, cfg)?;
    let n = op.len();
    let mut m = vec![0.0; n];
    let mut m_prev = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut grad = vec![0.0; n];
    // G·m and G·m_prev; G·y follows by linearity.
    let mut gm = vec![0.0; n];
    let mut gm_prev = vec![0.0; n];
    let mut res_y = d.to_vec();
    let start = sq_norm(d);
    let mut prev = start;
    let mut t = 1.0f64;
    let mut history = Vec::new();
    for it in 0..cfg.max_iters {
        std::mem::swap(&mut m, &mut m_prev);
        std::mem::swap(&mut gm, &mut gm_prev);
        prox_step(op, &y, &res_y, step, chi, &mut grad, &mut m);
        op.apply_into(&m, &mut gm);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        t = t_next;
        let mut misfit = 0.0;
        for i in 0..n {
            y[i] = m[i] + beta * (m[i] - m_prev[i]);
            let r = d[i] - gm[i];
            misfit += r * r;
            res_y[i] = r - beta * (gm[i] - gm_prev[i]);
        }
        let cur = misfit + chi * l1(&m);
        if !cur.is_finite() || cur > 10.0 * start + 1e-12 {
            return Err(Error::Divergence { iteration: it + 1, previous: prev, current: cur });
        }
        history.push(cur);
        if converged(prev, cur, cfg.tol) {
            break;
        }
        prev = cur;
    }
    Ok(Solution { m, history, chi, step })
}

pub fn solve(d: &[f64], op: &ConvOperator, cfg: &BpiConfig) -> Result<Solution> {
    match cfg.solver {
        Solver::Ista => ista_solve(d, op, cfg),
        Solver::Fista => fista_solve(d, op, cfg),
    }
}

/// Independent per-trace solves; results do not depend on the thread count.
pub fn invert_section(
    section: &TraceSection,
    op: &ConvOperator,
    cfg: &BpiConfig,
) -> Result<(ReflectivitySection, Vec<Solution>)> {
    let g = &section.grid;
    if g.rank() != 3 || g.channels() != 1 || g.height() != op.len() {
        return shape_err(format!("section {:?} does not match operator length {}", g.dims(), op.len()));
    }
    let sols = (0..g.width())
        .into_par_iter()
        .map(|x| solve(&trace(g, x), op, cfg))
        .collect::<Result<Vec<_>>>()?;
    let traces: Vec<Vec<f64>> = sols.iter().map(|s| s.m.clone()).collect();
    Ok((ReflectivitySection { grid: from_traces(&traces)? }, sols))
}

/// Relative `χ` factors tried by [`select_chi`].
pub const CHI_GRID: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];

/// Pick the relative `χ` factor with the lowest mean squared reflectivity
/// error over validation pairs. Returns `(factor, mse per factor)`.
pub fn select_chi(
    pairs: &[(TraceSection, ReflectivitySection)],
    op: &ConvOperator,
    cfg: &BpiConfig,
    grid: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if pairs.is_empty() || grid.is_empty() {
        return invalid("chi selection needs at least one validation pair and one candidate");
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &factor in grid {
        let c = BpiConfig { chi: factor, chi_mode: ChiMode::RelativeToData, ..cfg.clone() };
        let mut se = 0.0;
        let mut count = 0usize;
        for (s, r) in pairs {
            let (est, _) = invert_section(s, op, &c)?;
            se += est.grid.data().iter().zip(r.grid.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += r.grid.len();
        }
        scores.push(se / count as f64);
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| grid[i])
        .expect("non-empty grid");
    Ok((best, scores))
}

/// `iteration,objective` rows, one per entry of `history`.
pub fn write_history_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "objective"])?;
    for (i, v) in history.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}
