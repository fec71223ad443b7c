//! Scene files, run manifests, frame export and the commands behind the
//! `dav` binary.

mod args;
mod commands;
mod export;
pub mod harness;
mod manifest;
mod scene;

pub use args::{
    parse_camera, AugmentArgs, Cli, Command, EvaluateArgs, GenerateArgs, SceneOverrides, SweepArgs, SweepGrid,
    SynthdataArgs, TrainArgs,
};
pub use commands::{augment, evaluate, generate, run, sweep, synthdata, train_command};
pub use export::{write_frames_ppm, write_gif, write_ppm};
pub use manifest::{OutputGuard, OutputRecord, RunManifest, MANIFEST_FILE, MANIFEST_FORMAT};
pub use scene::{
    parse_scene, parse_scene_str, OutputFormat, SceneModulation, SceneObject, SceneOutput, SceneSampler, SceneSpec,
    SCENE_HEADER,
};
