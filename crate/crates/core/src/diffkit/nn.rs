//! Parameterised layers used by the denoiser.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::Result;

/// `x·W + b` with `W: [din, dout]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    /// Gaussian weights with standard deviation `gain / sqrt(din)`, zero bias.
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let std = gain / (din as f64).sqrt();
        let w = if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..din * dout)
                .map(|_| T::cast_from(normal.sample(rng)))
                .collect()
        } else {
            vec![T::zero(); din * dout]
        };
        let weight = store.add(format!("{name}.weight"), Tensor::new(&[din, dout], w)?)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[dout]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            din,
            dout,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn init<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], T::one()))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, Self::EPS)
    }
}
