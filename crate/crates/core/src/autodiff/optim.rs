use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{GradMap, ParamSet};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

/// `param -= lr * grad` for every tensor in `params`.
pub fn sgd_step(params: &mut ParamSet, grads: &GradMap, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(invalid!("learning rate must be positive, got {lr}"));
    }
    let ids: Vec<_> = params.ids().collect();
    let names = params.names().to_vec();
    for ((t, id), name) in params.tensors_mut().iter_mut().zip(ids).zip(names) {
        let g = grads.get(&id).ok_or(Error::MissingGradient(name))?;
        for (p, d) in t.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    }
    Ok(())
}

/// Stateful optimizer for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(invalid!("learning rate must be positive, got {}", config.lr));
        }
        Ok(Self {
            config,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.config.lr),
            OptimizerKind::Adam => self.adam(params, grads),
        }
    }

    fn adam(&mut self, params: &mut ParamSet, grads: &GradMap) -> Result<()> {
        if self.m.is_empty() {
            self.m = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let ids: Vec<_> = params.ids().collect();
        let names = params.names().to_vec();
        for (k, (p, id)) in params.tensors_mut().iter_mut().zip(ids).enumerate() {
            let g = grads.get(&id).ok_or_else(|| Error::MissingGradient(names[k].clone()))?;
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *pv -= self.config.lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
        Ok(())
    }
}
