use crate::diffmath::{NamedTensor, Tensor};
use crate::policynet::PolicyParams;
use crate::{LearnError, Result};

use super::PpoConfig;

/// Adam with bias-corrected moments, one slot per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &PolicyParams, cfg: &PpoConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut PolicyParams, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.tensors.len() {
            return Err(LearnError::Shape(format!("{} gradients for {} parameters", grads.len(), params.tensors.len())));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powf(self.step as f64);
        let c2 = 1.0 - self.beta2.powf(self.step as f64);
        for (i, ((_, p), g)) in params.tensors.iter_mut().zip(grads).enumerate() {
            if g.shape() != p.shape() {
                return Err(LearnError::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moments as named tensors, for checkpoints.
    pub fn to_named(&self, params: &PolicyParams) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        out.push(("adam.step".to_string(), Tensor::scalar(self.step as f64)));
        for ((name, _), m) in params.tensors.iter().zip(&self.m) {
            out.push((format!("adam.m.{name}"), m.clone()));
        }
        for ((name, _), v) in params.tensors.iter().zip(&self.v) {
            out.push((format!("adam.v.{name}"), v.clone()));
        }
        out
    }

    pub fn from_named(params: &PolicyParams, cfg: &PpoConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        let n = params.tensors.len();
        if tensors.len() != 2 * n + 1 {
            return Err(LearnError::Format(format!("optimizer state has {} tensors, expected {}", tensors.len(), 2 * n + 1)));
        }
        let mut it = tensors.into_iter();
        let (_, step) = it.next().expect("length checked");
        let step = step.item()?;
        if !(step >= 0.0 && step.fract() == 0.0) {
            return Err(LearnError::Format(format!("bad optimizer step count {step}")));
        }
        let mut adam = Self::new(params, cfg);
        adam.step = step as u64;
        for (slot, prefix) in [(0, "adam.m."), (1, "adam.v.")] {
            for (i, (pname, p)) in params.tensors.iter().enumerate() {
                let (name, t) = it.next().expect("length checked");
                if name.strip_prefix(prefix) != Some(pname.as_str()) || t.shape() != p.shape() {
                    return Err(LearnError::Format(format!("optimizer tensor {name} does not match {pname}")));
                }
                if slot == 0 {
                    adam.m[i] = t;
                } else {
                    adam.v[i] = t;
                }
            }
        }
        Ok(adam)
    }
}
