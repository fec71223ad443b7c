//! Scene file → clip, flow field, frames, GIF and a run manifest; then the
//! manifest alone regenerates the clip bit for bit.
//!
//! cargo run --release --example generate_scene -- [CHECKPOINT] [SCENE] [OUT]
//!
//! Without a checkpoint a small model is trained for a few hundred steps,
//! which is enough to exercise the pipeline but not to look good.

use std::path::PathBuf;

use dav::cli::{generate, parse_scene, train_command, GenerateArgs, SceneOverrides, TrainArgs};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let work = std::env::temp_dir().join("dav-generate");
    let checkpoint = match args.next() {
        Some(p) => PathBuf::from(p),
        None => {
            for (stage, checkpoint) in [(1, None), (2, Some(work.join("stage1.ckpt")))] {
                println!("training stage {stage}…");
                train_command(&TrainArgs {
                    stage,
                    out: work.clone(),
                    data: None,
                    checkpoint,
                    steps: 150,
                    batch: 8,
                    lr: None,
                    seed: 0,
                    clips: 64,
                })?;
            }
            work.join("stage2.ckpt")
        }
    };
    let scene_path = args.next().map_or_else(
        || PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/scenes/two_objects.toml"),
        PathBuf::from,
    );
    let out = args.next().map_or_else(|| work.join("run"), PathBuf::from);

    let scene = parse_scene(&scene_path)?;
    println!("scene {}: {:?}, {} object(s)", scene_path.display(), scene.caption.join(" "), scene.objects.len());

    let manifest = generate(&GenerateArgs {
        scene: Some(scene_path),
        manifest: None,
        checkpoint: Some(checkpoint),
        out: out.clone(),
        overrides: SceneOverrides::default(),
    })?;
    for o in &manifest.outputs {
        println!("  {:<20} {}", o.path.display(), &o.sha256[..12]);
    }
    for (k, v) in &manifest.metrics {
        println!("  {k} = {v:.3}");
    }

    let replay = generate(&GenerateArgs {
        scene: None,
        manifest: Some(out.join(dav::cli::MANIFEST_FILE)),
        checkpoint: None,
        out: work.join("replay"),
        overrides: SceneOverrides::default(),
    })?;
    let same = |name: &str| {
        let find = |m: &dav::cli::RunManifest| m.outputs.iter().find(|o| o.path.ends_with(name)).map(|o| o.sha256.clone());
        find(&manifest) == find(&replay)
    };
    println!("replay from manifest: clip identical {}, flow identical {}", same("clip.davvid"), same("flow.davflow"));
    Ok(())
}
