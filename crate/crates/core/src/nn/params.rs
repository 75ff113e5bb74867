use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
}

impl Parameter {
    pub fn grad_or_zeros(&self) -> Tensor {
        self.grad.clone().unwrap_or_else(|| Tensor::zeros(self.value.rows(), self.value.cols()))
    }
}

/// Named, ordered collection of trainable tensors plus their accumulated gradients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.id(&name).is_some() {
            return Err(Error::Config(alloc::format!("duplicate parameter name {name}")));
        }
        self.params.push(Parameter { name, value, grad: None });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.values().len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(g) => g.add_assign(grad),
            None => p.grad = Some(grad.clone()),
        }
    }
}

/// Uniform initialization in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`.
pub fn init_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = math::sqrt(1.0 / fan_in.max(1) as f64);
    init_bounded(rng, rows, cols, bound)
}

pub fn init_bounded<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for v in t.values_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}
