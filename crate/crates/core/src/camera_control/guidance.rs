use crate::diffkit::{Real, Tensor};
use crate::{Error, Result};

/// Default fraction of the training horizon below which the camera module
/// is bypassed at inference.
pub const CAMERA_CUTOFF: f64 = 0.85;

/// Joint classifier-free guidance, `eps_uncond + s·(eps_cond − eps_uncond)`.
///
/// Evaluated as `(1 − s)·eps_uncond + s·eps_cond`, which returns each branch
/// exactly at `s = 0` and `s = 1`.
pub fn camera_cfg_noise<T: Real>(
    eps_cond: &Tensor<T>,
    eps_uncond: &Tensor<T>,
    s: f64,
) -> Result<Tensor<T>> {
    if eps_cond.shape() != eps_uncond.shape() {
        return Err(Error::shape(
            "camera_cfg_noise",
            format!("{:?} vs {:?}", eps_cond.shape(), eps_uncond.shape()),
        ));
    }
    let (s, r) = (T::cast_from(s), T::cast_from(1.0 - s));
    let data = eps_cond
        .data()
        .iter()
        .zip(eps_uncond.data())
        .map(|(&c, &u)| r * u + s * c)
        .collect();
    Tensor::new(eps_cond.shape(), data)
}

/// Whether camera modules run at diffusion timestep `t`: true iff
/// `t ≥ cutoff_fraction · t_max`.
pub fn camera_active(t: usize, cutoff_fraction: f64, t_max: usize) -> Result<bool> {
    if !(0.0..=1.0).contains(&cutoff_fraction) {
        return Err(Error::invalid(format!(
            "camera cut-off {cutoff_fraction} outside [0, 1]"
        )));
    }
    if t > t_max {
        return Err(Error::invalid(format!("timestep {t} beyond horizon {t_max}")));
    }
    Ok(t as f64 + 1e-9 >= cutoff_fraction * t_max as f64)
}
