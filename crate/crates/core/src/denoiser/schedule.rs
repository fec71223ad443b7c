use crate::diffkit::{Real, Tensor};
use crate::{Error, Result};

/// Training horizon: timesteps run `1..=T_MAX`, with `t = 0` the clean data.
pub const T_MAX: usize = 1000;

/// Variance-preserving DDPM noise levels from a linear beta schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    /// `ᾱ_t` for `t = 0..=t_max`, with `ᾱ_0 = 1`.
    alpha_bar: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(T_MAX, 1e-4, 2e-2)
    }
}

impl DiffusionSchedule {
    /// Betas spaced linearly from `beta_start` (t = 1) to `beta_end`
    /// (t = t_max).
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Self {
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for t in 1..=t_max {
            let frac = if t_max == 1 {
                0.0
            } else {
                (t - 1) as f64 / (t_max - 1) as f64
            };
            acc *= 1.0 - (beta_start + (beta_end - beta_start) * frac);
            alpha_bar.push(acc);
        }
        Self { alpha_bar }
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.t_max() {
            Err(Error::invalid(format!(
                "timestep {t} outside [0, {}]",
                self.t_max()
            )))
        } else {
            Ok(())
        }
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bar[t])
    }

    /// Signal scale `α_t = sqrt(ᾱ_t)`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar(t)?.sqrt())
    }

    /// Noise scale `σ_t = sqrt(1 − ᾱ_t)`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }
}

/// `x_t = α_t·x0 + σ_t·eps`.
pub fn ddpm_forward<T: Real>(
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    schedule: &DiffusionSchedule,
) -> Result<Tensor<T>> {
    if x0.shape() != eps.shape() {
        return Err(Error::shape(
            "ddpm_forward",
            format!("x0 {:?} vs eps {:?}", x0.shape(), eps.shape()),
        ));
    }
    let a = T::cast_from(schedule.alpha(t)?);
    let s = T::cast_from(schedule.sigma(t)?);
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| a * x + s * e)
        .collect();
    Tensor::new(x0.shape(), data)
}

/// Strided sampling timesteps, highest first: `t_max − stride + 1, …, 1`
/// with `stride = t_max / steps` (the leading spacing with a unit offset).
/// The top of the horizon is never visited, so a cut-off fraction of 1
/// keeps timestep-gated modules off for the whole trajectory.
pub fn ddim_timesteps(steps: usize, t_max: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_max {
        return Err(Error::invalid(format!(
            "sampling steps must be in [1, {t_max}], got {steps}"
        )));
    }
    let stride = t_max / steps;
    Ok((0..steps).rev().map(|i| i * stride + 1).collect())
}
