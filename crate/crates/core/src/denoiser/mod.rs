//! The toy video denoiser: DDPM schedule, patch-token transformer with
//! camera modules and modulation hooks, AdamW, two-stage training and the
//! DDIM sampler.

mod check;
mod model;
mod optim;
mod sample;
mod schedule;
mod train;

pub use check::model_gradcheck;
pub use model::{
    patchify, timestep_features, unpatchify, Block, Conditioning, DenoiserConfig, DenoiserModel,
    ForwardOutput, CAMERA_PREFIX,
};
pub use optim::{AdamW, AdamWConfig, StepReport};
pub use sample::{ddim_sample, eps_mse, SamplerConfig, StepView, DEFAULT_GUIDANCE, DEFAULT_STEPS};
pub use schedule::{ddim_timesteps, ddpm_forward, DiffusionSchedule, T_MAX};
pub use train::{
    make_batch, train, train_step, LossRecord, Stage, StepOutcome, TrainConfig, TrainSample,
    CAMERA_STAGE_MIN_T,
};
