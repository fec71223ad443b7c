//! Camera-movement conditioning: Fourier camera embedding with separate
//! pan and zoom encoders, the gated temporal cross-attention camera module,
//! joint classifier-free guidance and the inference cut-off.

mod embed;
mod guidance;
mod module;

pub use embed::{embed_camera, fourier_embed, CameraEmbedder, CameraEmbedding, NUM_FREQS};
pub use guidance::{camera_active, camera_cfg_noise, CAMERA_CUTOFF};
pub use module::{camera_module_forward, CameraModule};
