//! Central finite-difference gradient checks in 64-bit precision.
//!
//! The checker only ever calls the forward closure, so it is independent of
//! the backward rules it verifies.

use super::{Graph, ParamStore, RngState, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference half step.
    pub step: f64,
    /// Coordinates sampled per tensor (all of them if the tensor is smaller).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: 24,
            seed: 0,
        }
    }
}

/// Norm-wise relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// for each checked tensor.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.entries.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn sample_coords(len: usize, samples: usize, rng: &mut RngState) -> Vec<usize> {
    if len <= samples {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut idx);
    idx.truncate(samples);
    idx
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Check gradients of `f` with respect to constant input tensors.
pub fn check_inputs(
    cfg: GradCheck,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    check_inputs_with(cfg, &ParamStore::new(), inputs, f)
}

/// As [`check_inputs`], with `f` free to read parameters from `store`.
pub fn check_inputs_with(
    cfg: GradCheck,
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.scalar(out)
    };

    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = RngState::new(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let coords = sample_coords(inputs[ti].real_count(), cfg.samples, &mut rng);
        let zero = inputs[ti].zeros_like();
        let analytic_t = grads.wrt(*var).unwrap_or(&zero);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &c in &coords {
            let orig = work[ti].get_scalar(c);
            work[ti].set_scalar(c, orig + cfg.step);
            let plus = eval(&work)?;
            work[ti].set_scalar(c, orig - cfg.step);
            let minus = eval(&work)?;
            work[ti].set_scalar(c, orig);
            numeric.push((plus - minus) / (2.0 * cfg.step));
            analytic.push(analytic_t.get_scalar(c));
        }
        report.entries.push((format!("input {ti}"), rel_error(&analytic, &numeric)));
    }
    Ok(report)
}

/// Check gradients of `f` with respect to every parameter in `store`.
pub fn check_params(
    cfg: GradCheck,
    store: &ParamStore<f64>,
    f: impl Fn(&mut Graph<f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    let grads = g.backward(out)?;
    drop(g);

    let mut rng = RngState::new(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for id in store.ids() {
        let p = store.get(id);
        let coords = sample_coords(p.value.real_count(), cfg.samples, &mut rng);
        let zero = p.value.zeros_like();
        let analytic_t = grads.param(id).unwrap_or(&zero);
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &c in &coords {
            let orig = p.value.get_scalar(c);
            work.get_mut(id).value.set_scalar(c, orig + cfg.step);
            let plus = {
                let mut g = Graph::new(&work);
                let out = f(&mut g)?;
                g.scalar(out)?
            };
            work.get_mut(id).value.set_scalar(c, orig - cfg.step);
            let minus = {
                let mut g = Graph::new(&work);
                let out = f(&mut g)?;
                g.scalar(out)?
            };
            work.get_mut(id).value.set_scalar(c, orig);
            numeric.push((plus - minus) / (2.0 * cfg.step));
            analytic.push(analytic_t.get_scalar(c));
        }
        report.entries.push((p.name.clone(), rel_error(&analytic, &numeric)));
    }
    Ok(report)
}
