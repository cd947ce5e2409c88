use std::f64::consts::PI;

use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};
use crate::model::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// `base_lr · ½(1 + cos(π · step / total_steps))`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (PI * t).cos())
}

/// Adam moments for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = |p: &ParamStore| {
            let mut s = ParamStore::default();
            for (name, t) in p.iter() {
                s.insert(name.clone(), Tensor::zeros(t.shape()));
            }
            s
        };
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Restores saved moments.
    pub fn from_parts(step: u64, m: ParamStore, v: ParamStore) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&ParamStore, &ParamStore) {
        (&self.m, &self.v)
    }

    /// One update that increases the objective whose gradient is `ascent`
    /// (descent on the negated objective). Nothing is modified if any
    /// gradient entry is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, ascent: &ParamStore, lr: f64, epoch: usize) -> Result<()> {
        for (name, g) in ascent.iter() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                    epoch,
                });
            }
            let p = params
                .get(name)
                .ok_or_else(|| contract(format!("gradient for unknown parameter `{name}`")))?;
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let Some(g) = ascent.get(name) else { continue };
            let m = self.m.get_mut(name).expect("moments mirror parameters").data_mut();
            let v = self.v.get_mut(name).expect("moments mirror parameters").data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let g = -g;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
