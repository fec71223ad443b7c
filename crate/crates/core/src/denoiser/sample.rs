use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{patchify, unpatchify, Conditioning, DenoiserModel, ForwardOutput};
use super::schedule::{ddim_timesteps, DiffusionSchedule};
use crate::camera_control::{camera_active, camera_cfg_noise, CAMERA_CUTOFF};
use crate::camgen::CameraParams;
use crate::caption::Caption;
use crate::diffkit::{ParamStore, Real, Tape, Tensor};
use crate::object_control::ModulationSpec;
use crate::video::VideoClip;
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 50;
pub const DEFAULT_GUIDANCE: f64 = 9.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f64,
    /// Camera modules run only at timesteps `≥ camera_cutoff · t_max`.
    pub camera_cutoff: f64,
    pub modulation: Option<ModulationSpec>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            camera_cutoff: CAMERA_CUTOFF,
            modulation: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return Err(Error::invalid(format!("guidance scale must be ≥ 0, got {}", self.guidance)));
        }
        if !(0.0..=1.0).contains(&self.camera_cutoff) {
            return Err(Error::invalid(format!(
                "camera cut-off {} outside [0, 1]",
                self.camera_cutoff
            )));
        }
        if let Some(m) = &self.modulation {
            m.validate(None)?;
        }
        Ok(())
    }
}

/// What the conditional branch saw at one sampling step.
pub struct StepView<'a, T: Real> {
    pub step: usize,
    /// Training timestep this step maps to.
    pub t: usize,
    pub camera_on: bool,
    pub tape: &'a Tape<T>,
    pub output: &'a ForwardOutput,
}

/// Deterministic DDIM sampling with joint classifier-free guidance.
///
/// Each step evaluates the conditional branch (caption, camera, modulation)
/// and, unless `guidance == 1`, the null branch (null caption, static
/// camera, no modulation), and combines them with
/// [`camera_cfg_noise`]. Camera modules are skipped entirely at steps below
/// the cut-off. The result is mapped from `[-1, 1]` to `[0, 1]` and clamped
/// only at the end.
pub fn ddim_sample<T: Real>(
    model: &DenoiserModel,
    store: &ParamStore<T>,
    caption: &Caption,
    camera: Option<CameraParams>,
    cfg: &SamplerConfig,
    mut observer: Option<&mut dyn FnMut(&StepView<'_, T>)>,
) -> Result<VideoClip> {
    cfg.validate()?;
    let schedule = DiffusionSchedule::default();
    let t_max = schedule.t_max();
    let shape = model.config.clip_shape();
    let patch = model.config.patch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n: usize = shape.iter().product();
    let mut x = Tensor::<T>::new(
        &shape,
        (0..n)
            .map(|_| T::cast_from(StandardNormal.sample(&mut rng)))
            .collect(),
    )?;
    let ids = caption.ids();
    let null = Caption::null().ids();
    let timesteps = ddim_timesteps(cfg.steps, t_max)?;
    for (step, &t) in timesteps.iter().enumerate() {
        let camera_on = match camera {
            Some(_) => camera_active(t, cfg.camera_cutoff, t_max)?,
            None => false,
        };
        let cond = Conditioning {
            caption: &ids,
            camera: if camera_on { camera } else { None },
            modulation: cfg.modulation.as_ref(),
        };
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, store, &x, t, &cond)?;
        if let Some(obs) = observer.as_mut() {
            obs(&StepView {
                step,
                t,
                camera_on,
                tape: &tape,
                output: &out,
            });
        }
        let eps_c = unpatchify(tape.value(out.eps), shape, patch)?;
        drop(tape);
        let eps = if cfg.guidance == 1.0 {
            eps_c
        } else {
            let uncond = Conditioning {
                caption: &null,
                camera: if camera_on { Some(CameraParams::STATIC) } else { None },
                modulation: None,
            };
            let eps_u = model.predict_eps(store, &x, t, &uncond)?;
            camera_cfg_noise(&eps_c, &eps_u, cfg.guidance)?
        };
        let t_prev = timesteps.get(step + 1).copied().unwrap_or(0);
        let (a, s) = (schedule.alpha(t)?, schedule.sigma(t)?);
        let (ap, sp) = (schedule.alpha(t_prev)?, schedule.sigma(t_prev)?);
        let (inv_a, s, ap, sp) = (
            T::cast_from(1.0 / a),
            T::cast_from(s),
            T::cast_from(ap),
            T::cast_from(sp),
        );
        for (xv, &e) in x.data_mut().iter_mut().zip(eps.data()) {
            let x0 = (*xv - s * e) * inv_a;
            *xv = ap * x0 + sp * e;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite(format!("sampler state after step {step} (t = {t})")));
        }
    }
    let half = T::cast_from(0.5);
    let mut clip = VideoClip::from_tensor(&x.map(|v| (v + T::one()) * half))?;
    clip.clamp_unit();
    Ok(clip)
}

/// Mean squared noise-prediction error, the quantity training minimises.
pub fn eps_mse<T: Real>(pred: &Tensor<T>, eps: &Tensor<T>, patch: usize) -> Result<f64> {
    let (p, e) = (patchify(pred, patch)?, patchify(eps, patch)?);
    let n = p.len() as f64;
    Ok(p.data()
        .iter()
        .zip(e.data())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::denoiser::model::DenoiserConfig;

    fn model() -> (DenoiserModel, ParamStore<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let cfg = DenoiserConfig {
            frames: 3,
            height: 8,
            width: 8,
            patch: 2,
            dim: 16,
            heads: 2,
            blocks: 2,
            ffn_mult: 2,
            camera_freqs: 4,
            ..Default::default()
        };
        let m = DenoiserModel::init(cfg, &mut store, &mut rng).unwrap();
        // give the gates and output layer something to do
        for (id, name) in store.iter().map(|(i, p)| (i, p.name.clone())).collect::<Vec<_>>() {
            if name.ends_with("alpha") || name.starts_with("patch_out") {
                let v = store.value_mut(id);
                for (k, x) in v.data_mut().iter_mut().enumerate() {
                    *x = 0.05 * ((k % 7) as f32 - 3.0) + if name.ends_with("alpha") { 0.5 } else { 0.0 };
                }
            }
        }
        (m, store)
    }

    fn cfg(steps: usize) -> SamplerConfig {
        SamplerConfig {
            steps,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_in_range() {
        let (m, store) = model();
        let cap = Caption::parse("red circle background").unwrap();
        let cam = Some(CameraParams::new(0.5, 0.0, 1.0).unwrap());
        let a = ddim_sample(&m, &store, &cap, cam, &cfg(10), None).unwrap();
        let b = ddim_sample(&m, &store, &cap, cam, &cfg(10), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), [3, 3, 8, 8]);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unit_guidance_is_the_conditional_branch() {
        let (m, store) = model();
        let cap = Caption::parse("blue square background").unwrap();
        let c = SamplerConfig {
            guidance: 1.0,
            ..cfg(5)
        };
        let mut seen = Vec::new();
        let mut obs = |v: &StepView<'_, f32>| seen.push(v.t);
        let a = ddim_sample(&m, &store, &cap, None, &c, Some(&mut obs)).unwrap();
        assert_eq!(seen, vec![801, 601, 401, 201, 1]);
        // reproduce the single branch by hand
        let schedule = DiffusionSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = m.config.clip_shape();
        let n: usize = shape.iter().product();
        let mut x = Tensor::<f32>::new(
            &shape,
            (0..n).map(|_| f32::cast_from(StandardNormal.sample(&mut rng))).collect(),
        )
        .unwrap();
        let ids = cap.ids();
        let ts = ddim_timesteps(5, 1000).unwrap();
        for (i, &t) in ts.iter().enumerate() {
            let cond = Conditioning {
                caption: &ids,
                camera: None,
                modulation: None,
            };
            let e = m.predict_eps(&store, &x, t, &cond).unwrap();
            let tp = ts.get(i + 1).copied().unwrap_or(0);
            let (ia, s) = ((1.0 / schedule.alpha(t).unwrap()) as f32, schedule.sigma(t).unwrap() as f32);
            let (ap, sp) = (schedule.alpha(tp).unwrap() as f32, schedule.sigma(tp).unwrap() as f32);
            for (xv, &ev) in x.data_mut().iter_mut().zip(e.data()) {
                let x0 = (*xv - s * ev) * ia;
                *xv = ap * x0 + sp * ev;
            }
        }
        let mut b = VideoClip::from_tensor(&x.map(|v| (v + 1.0) * 0.5)).unwrap();
        b.clamp_unit();
        assert_eq!(a, b);
    }

    #[test]
    fn full_cutoff_bypasses_camera_exactly() {
        let (m, store) = model();
        let cap = Caption::parse("green triangle background").unwrap();
        let base = ddim_sample(&m, &store, &cap, None, &cfg(8), None).unwrap();
        let c = SamplerConfig {
            camera_cutoff: 1.0,
            ..cfg(8)
        };
        let cam = Some(CameraParams::new(-0.7, 0.2, 1.5).unwrap());
        assert_eq!(ddim_sample(&m, &store, &cap, cam, &c, None).unwrap(), base);
        // the default cut-off does run the camera modules (gates are non-zero)
        let mut on = Vec::new();
        let mut obs = |v: &StepView<'_, f32>| on.push((v.t, v.camera_on));
        let moved = ddim_sample(&m, &store, &cap, cam, &cfg(8), Some(&mut obs)).unwrap();
        assert_ne!(moved, base);
        assert!(on.iter().all(|&(t, c)| c == (t >= 850)));
    }
}
