use serde::{Deserialize, Serialize};

use crate::diffkit::{ParamStore, Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepReport {
    Applied { grad_norm: f64 },
    /// The update was skipped because a gradient held a non-finite value.
    Skipped { param: String },
}

/// Adaptive moments with decoupled weight decay. Only trainable parameters
/// are updated; moment buffers are allocated lazily per parameter.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies `grads` (one tensor per parameter, in store order).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<StepReport> {
        if grads.len() != store.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!("{} gradients for {} parameters", grads.len(), store.len()),
            ));
        }
        let ids: Vec<_> = store.ids().collect();
        let mut sq = 0.0f64;
        for (&id, g) in ids.iter().zip(grads) {
            let p = store.get(id);
            if !p.trainable {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("gradient {:?} for {} {:?}", g.shape(), p.name, p.value.shape()),
                ));
            }
            if !g.all_finite() {
                return Ok(StepReport::Skipped {
                    param: p.name.clone(),
                });
            }
            sq += g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
        let norm = sq.sqrt();
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        self.step += 1;
        self.m.resize(ids.len(), None);
        self.v.resize(ids.len(), None);
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::cast_from(c.beta1), T::cast_from(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let clip = T::cast_from(clip);
        let lr_t = T::cast_from(c.lr / bc1);
        let inv_bc2 = T::cast_from(1.0 / bc2);
        let eps = T::cast_from(c.eps);
        let decay = T::cast_from(1.0 - c.lr * c.weight_decay);
        for (k, (&id, g)) in ids.iter().zip(grads).enumerate() {
            if !store.get(id).trainable {
                continue;
            }
            let n = g.len();
            let m = self.m[k].get_or_insert_with(|| vec![T::zero(); n]);
            let v = self.v[k].get_or_insert_with(|| vec![T::zero(); n]);
            let w = store.value_mut(id).data_mut();
            for i in 0..n {
                let gi = g.data()[i] * clip;
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                let update = lr_t * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
                w[i] = w[i] * decay - update;
            }
        }
        Ok(StepReport::Applied { grad_norm: norm })
    }
}
