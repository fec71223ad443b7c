use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{patchify, Conditioning, DenoiserModel};
use super::optim::{AdamW, AdamWConfig, StepReport};
use super::schedule::{ddpm_forward, DiffusionSchedule, T_MAX};
use crate::camgen::{aug_with_cam_motion, resize_bilinear, sample_camera_params, CameraParams, SyntheticClip};
use crate::caption::Caption;
use crate::diffkit::{ParamStore, Real, Tape, Tensor};
use crate::video::VideoClip;
use crate::{Error, Result};

/// Lowest timestep drawn while training the camera modules.
pub const CAMERA_STAGE_MIN_T: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Base model: every non-camera weight trains, camera modules are off.
    Base,
    /// Camera conditioning: only the embedder and camera modules train.
    Camera,
}

impl Stage {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Base),
            2 => Ok(Stage::Camera),
            _ => Err(Error::invalid(format!("stage must be 1 or 2, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Stage::Base => 1,
            Stage::Camera => 2,
        }
    }

    pub fn timestep_range(self) -> (usize, usize) {
        match self {
            Stage::Base => (1, T_MAX),
            Stage::Camera => (CAMERA_STAGE_MIN_T, T_MAX),
        }
    }

    /// Marks the parameters this stage updates as trainable, the rest frozen.
    pub fn apply_freeze<T: Real>(self, store: &mut ParamStore<T>) {
        match self {
            Stage::Base => store.set_trainable(|n| !DenoiserModel::is_camera_param(n)),
            Stage::Camera => store.set_trainable(DenoiserModel::is_camera_param),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// One training example at model resolution, values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub clip: VideoClip,
    pub caption: Vec<usize>,
    /// Camera movement present in `clip`; `None` for the base stage.
    pub camera: Option<CameraParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    /// Probability of swapping in the null caption (and static camera).
    pub cond_dropout: f64,
    /// Fraction of base-stage clips given a random, unconditioned camera
    /// movement, so the base model already knows how to render motion.
    pub base_motion_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            steps: 3000,
            batch: 8,
            optimizer: AdamWConfig::default(),
            cond_dropout: 0.1,
            base_motion_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Draws a batch from stationary source clips: base-stage clips are
/// resized (and optionally moved by an unconditioned random camera);
/// camera-stage clips are augmented with sampled camera parameters that
/// become the condition.
pub fn make_batch<R: Rng + ?Sized>(
    sources: &[SyntheticClip],
    stage: Stage,
    cfg: &TrainConfig,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<Vec<TrainSample>> {
    if sources.is_empty() {
        return Err(Error::invalid("no source clips to train on"));
    }
    (0..cfg.batch)
        .map(|_| {
            let src = &sources[rng.gen_range(0..sources.len())];
            let caption = src.caption.ids();
            match stage {
                Stage::Base => {
                    let clip = if rng.gen_bool(cfg.base_motion_fraction) {
                        aug_with_cam_motion(&src.clip, &sample_camera_params(rng), h, w)?
                    } else {
                        resize_bilinear(&src.clip, h, w)
                    };
                    Ok(TrainSample {
                        clip,
                        caption,
                        camera: None,
                    })
                }
                Stage::Camera => {
                    let params = sample_camera_params(rng);
                    Ok(TrainSample {
                        clip: aug_with_cam_motion(&src.clip, &params, h, w)?,
                        caption,
                        camera: Some(params),
                    })
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub report: StepReport,
}

/// One noise-prediction step on `batch`: draws a timestep and noise per
/// sample, applies conditioning dropout, averages the squared errors and
/// updates the trainable parameters.
pub fn train_step<T: Real, R: Rng + ?Sized>(
    model: &DenoiserModel,
    store: &mut ParamStore<T>,
    optimizer: &mut AdamW<T>,
    batch: &[TrainSample],
    schedule: &DiffusionSchedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let (t_lo, t_hi) = cfg.stage.timestep_range();
    let mut tape = Tape::new();
    let mut losses = Vec::with_capacity(batch.len());
    let null = Caption::null().ids();
    for sample in batch {
        let x0 = sample.clip.to_tensor::<T>().map(|v| v * T::cast_from(2.0) - T::one());
        let t = rng.gen_range(t_lo..=t_hi);
        let eps = Tensor::new(
            x0.shape(),
            (0..x0.len())
                .map(|_| T::cast_from(StandardNormal.sample(rng)))
                .collect(),
        )?;
        let x_t = ddpm_forward(&x0, t, &eps, schedule)?;
        let drop = rng.gen_bool(cfg.cond_dropout);
        let camera = match cfg.stage {
            Stage::Base => None,
            Stage::Camera if drop => Some(CameraParams::STATIC),
            Stage::Camera => Some(sample.camera.unwrap_or(CameraParams::STATIC)),
        };
        let cond = Conditioning {
            caption: if drop { &null } else { &sample.caption },
            camera,
            modulation: None,
        };
        let out = model.forward(&mut tape, store, &x_t, t, &cond)?;
        let target = patchify(&eps, model.config.patch)?;
        losses.push(tape.mse(out.eps, &target)?);
    }
    let total = tape.concat0(&losses)?;
    let total = tape.sum(total);
    let loss = tape.scale(total, T::cast_from(1.0 / batch.len() as f64));
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        let per_sample: Vec<f64> = losses
            .iter()
            .map(|&l| tape.value(l).data()[0].as_f64())
            .collect();
        return Err(Error::NonFinite(format!(
            "training loss at optimizer step {} (per-sample losses {per_sample:?})",
            optimizer.steps_taken() + 1
        )));
    }
    let grads = tape.backward(loss)?.for_params(store);
    let report = optimizer.step(store, &grads)?;
    Ok(StepOutcome {
        loss: value,
        report,
    })
}

/// Loss-log record emitted once per logged step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: u8,
    pub step: usize,
    pub loss: f64,
    pub skipped: bool,
}

/// Runs `cfg.steps` optimizer steps, calling `log` after each one.
pub fn train<T: Real, R: Rng + ?Sized>(
    model: &DenoiserModel,
    store: &mut ParamStore<T>,
    sources: &[SyntheticClip],
    cfg: &TrainConfig,
    rng: &mut R,
    mut log: impl FnMut(&LossRecord),
) -> Result<Vec<f64>> {
    cfg.stage.apply_freeze(store);
    let schedule = DiffusionSchedule::default();
    let mut optimizer = AdamW::new(cfg.optimizer);
    let (h, w) = (model.config.height, model.config.width);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = make_batch(sources, cfg.stage, cfg, h, w, rng)?;
        let out = train_step(model, store, &mut optimizer, &batch, &schedule, cfg, rng)?;
        let record = LossRecord {
            stage: cfg.stage.number(),
            step,
            loss: out.loss,
            skipped: matches!(out.report, StepReport::Skipped { .. }),
        };
        log(&record);
        history.push(out.loss);
    }
    Ok(history)
}
