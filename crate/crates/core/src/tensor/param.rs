use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Index of a [`Parameter`] inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = self.value.zeros_like();
    }
}

/// Ordered collection of parameters. Order is part of the checkpoint format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Total trainable real scalars (complex entries count as two).
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.real_count()).sum()
    }

    /// Add `grads[i]` into parameter `i`'s gradient. Entries set to `None` were unreached.
    pub fn accumulate(&mut self, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != self.params.len() {
            return shape_err(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            ));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if let Some(g) = g {
                if g.dims() != p.value.dims() || g.is_complex() != p.value.is_complex() {
                    return shape_err(format!("gradient for {} has dims {:?}", p.name, g.dims()));
                }
                p.grad.add_assign(g);
            }
        }
        Ok(())
    }
}
