//! Two-stage training: the base denoiser on stationary clips, then only
//! the camera embedder and camera modules on camera-augmented clips.
//!
//! cargo run --release --example train_two_stage -- 300 300 /tmp/dav-run
//!
//! The full budget is 3000 + 3000 steps (about 16 minutes on one core).

use std::path::PathBuf;

use dav::camgen::SynthConfig;
use dav::cli::harness::{fresh_model, save_model, synth_dataset, CheckpointMeta};
use dav::denoiser::{train, DenoiserConfig, DenoiserModel, Stage, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps1: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let steps2: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let out: PathBuf = args.next().map_or_else(|| std::env::temp_dir().join("dav-train"), Into::into);
    std::fs::create_dir_all(&out)?;

    let sources = synth_dataset(512, 0, &SynthConfig::default())?;
    let (model, mut store) = fresh_model(DenoiserConfig::default())?;
    println!("{} parameters, {} of them in the camera path", store.num_scalars(), {
        store
            .iter()
            .filter(|(_, p)| DenoiserModel::is_camera_param(&p.name))
            .map(|(_, p)| p.value.len())
            .sum::<usize>()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (stage, steps) in [(Stage::Base, steps1), (Stage::Camera, steps2)] {
        let cfg = TrainConfig {
            steps,
            ..TrainConfig::new(stage)
        };
        let before = store.checksum(|p| !DenoiserModel::is_camera_param(&p.name));
        let losses = train(&model, &mut store, &sources, &cfg, &mut rng, |r| {
            if (r.step + 1) % 100 == 0 {
                println!("{stage} step {:>5}: loss {:.4}", r.step + 1, r.loss);
            }
        })?;
        let after = store.checksum(|p| !DenoiserModel::is_camera_param(&p.name));
        let tail = &losses[losses.len().saturating_sub(50)..];
        println!(
            "{stage}: mean loss of the last {} steps {:.4}; base weights {}",
            tail.len(),
            tail.iter().sum::<f64>() / tail.len() as f64,
            if before == after { "unchanged" } else { "updated" }
        );
        let meta = CheckpointMeta {
            model: model.config.clone(),
            stage: stage.number(),
            steps,
            seed: 0,
            parent_sha256: None,
        };
        let path = out.join(format!("stage{}.ckpt", stage.number()));
        let sha = save_model(&path, &meta, &store)?;
        println!("saved {} ({})", path.display(), &sha[..16]);
    }
    let gates: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.name.ends_with(".alpha"))
        .map(|(_, p)| format!("{:+.3}", p.value.data()[0].tanh()))
        .collect();
    println!("camera gates tanh(α): {}", gates.join(" "));
    Ok(())
}
