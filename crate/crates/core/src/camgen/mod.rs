//! Camera parameters, pan/zoom crop augmentation of stationary clips and the
//! procedural moving-shapes dataset.

mod augment;
mod camera;
mod clipio;
mod synth;

pub use augment::{
    aug_with_cam_motion, compute_crop_boxes, normalize_boxes, resize_bilinear, sample_window,
    CropBoxSequence,
};
pub use camera::{sample_camera_params, CameraParams};
pub use clipio::{read_clip, read_meta, write_clip, write_meta, ClipMeta, ObjectTrack, CLIP_MAGIC};
pub use synth::{gen_synthetic_clip, ObjectSpec, SynthConfig, SyntheticClip, SyntheticClipSpec};
