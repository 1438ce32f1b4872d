use super::params::{Gradients, Parameters};
use crate::error::{Error, Result};

/// Bias-corrected Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Parameters, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update. Fails without touching anything if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("state tracks {} tensors, store has {}", self.m.len(), params.len()),
            ));
        }
        for (id, g) in grads.iter() {
            if g.len() != params.get(id).len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient for {} has {} values", params.name(id), g.len()),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in parameter {}", params.name(id))));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let p = params.get_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
