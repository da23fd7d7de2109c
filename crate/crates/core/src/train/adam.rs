use crate::error::{shape_err, Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moments per real component (complex entries as re, im pairs).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.real_count()]).collect();
        Self { v: m.clone(), m, step: 0 }
    }
}

fn components<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    match t {
        Tensor::Real(g) => g.data().to_vec(),
        Tensor::Complex(g) => g.data().iter().flat_map(|z| [z.re, z.im]).collect(),
    }
}

/// One bias-corrected Adam update. Missing gradients count as zero.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return shape_err(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        ));
    }
    let ids: Vec<_> = store.ids().collect();
    for (&id, g) in ids.iter().zip(grads) {
        let p = store.get(id);
        if state.m[id.index()].len() != p.value.real_count() {
            return shape_err(format!("moment shape for {} does not match", p.name));
        }
        if let Some(g) = g {
            if g.dims() != p.value.dims() || g.is_complex() != p.value.is_complex() {
                return shape_err(format!("gradient for {} has dims {:?}", p.name, g.dims()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {}", p.name)));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (bc1, bc2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    for (&id, g) in ids.iter().zip(grads) {
        let Some(g) = g else { continue };
        let g = components(g);
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let mut update = |i: usize, x: &mut T| {
            let gi = g[i].as_f64();
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            let step = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPSILON);
            *x = T::lit(x.as_f64() - step);
        };
        match &mut store.get_mut(id).value {
            Tensor::Real(p) => p.data_mut().iter_mut().enumerate().for_each(|(i, x)| update(i, x)),
            Tensor::Complex(p) => p.data_mut().iter_mut().enumerate().for_each(|(i, z)| {
                update(2 * i, &mut z.re);
                update(2 * i + 1, &mut z.im);
            }),
        }
    }
    Ok(())
}
