use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter in its [`Parameters`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named learnable tensors in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.tensors).enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }
}

/// Gradient buffers mirroring a [`Parameters`] store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &Parameters) -> Self {
        Self { grads: params.tensors.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn add_to(&mut self, id: ParamId, g: &[f64]) {
        self.grads[id.0].iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g.as_slice()))
    }
}

/// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, for layers feeding ReLU-family
/// activations.
pub fn he_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

/// `U(-sqrt(6 / (fan_in + fan_out)), ..)`.
pub fn glorot_uniform<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

pub fn uniform<R: Rng>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
