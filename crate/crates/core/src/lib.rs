//! Decoupled camera-movement and object-motion control for a toy
//! text-to-video diffusion model.
//!
//! The crate is organised by subsystem:
//!
//! - [`diffkit`]: dense tensors, a reverse-mode tape, finite-difference
//!   checks and the checkpoint format.
//! - [`camgen`]: camera parameters, pan/zoom crop augmentation of
//!   stationary clips and the procedural moving-shapes dataset.
//! - [`camera_control`]: Fourier camera embedding, the gated temporal
//!   cross-attention camera module, guidance and the inference cut-off.
//! - [`object_control`]: box trajectories and the spatial cross-attention
//!   modulation term (amplification + suppression).
//! - [`denoiser`]: the patch-token video denoiser, DDPM schedule, AdamW,
//!   two-stage training and the DDIM sampler.
//! - [`metrics`]: analytic camera flow, block-matching flow estimation,
//!   flow error, colour-threshold detection and mIoU/AP50.
//! - [`cli`]: scene files, run manifests and the commands behind the `dav`
//!   binary.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod caption;
pub mod camera_control;
pub mod camgen;
pub mod cli;
pub mod denoiser;
pub mod diffkit;
mod error;
pub mod geometry;
pub mod metrics;
pub mod object_control;
pub mod video;

pub use error::{Error, Result};
