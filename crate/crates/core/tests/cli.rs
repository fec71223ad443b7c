use std::path::Path;
use std::process::{Command, Output};

use dav::camgen::read_clip;
use dav::cli::harness::{fresh_model, save_model, CheckpointMeta};
use dav::denoiser::DenoiserConfig;

fn dav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dav")).args(args).output().expect("dav runs")
}

fn ok(args: &[&str]) -> String {
    let out = dav(args);
    assert!(
        out.status.success(),
        "dav {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn untrained_checkpoint(path: &Path) {
    let (model, store) = fresh_model(DenoiserConfig::default()).unwrap();
    let meta = CheckpointMeta {
        model: model.config.clone(),
        stage: 2,
        steps: 0,
        seed: 0,
        parent_sha256: None,
    };
    save_model(path, &meta, &store).unwrap();
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn augment_with_identity_camera_copies_the_clip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let data_s = data.to_str().unwrap();
    ok(&["synthdata", "--out", data_s, "--count", "2", "--size", "32"]);
    let aug = tmp.path().join("aug");
    ok(&["augment", "--input", data_s, "--cam", "0,0,1", "--out", aug.to_str().unwrap()]);
    for name in ["clip_0000.davvid", "clip_0001.davvid"] {
        assert_eq!(read_clip(&data.join(name)).unwrap(), read_clip(&aug.join(name)).unwrap());
    }
    assert_eq!(entries(tmp.path()), ["aug", "data"]);
}

#[test]
fn augment_accepts_negative_pan() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["synthdata", "--out", data.to_str().unwrap(), "--count", "1", "--size", "32"]);
    let clip = data.join("clip_0000.davvid");
    let aug = tmp.path().join("aug");
    ok(&[
        "augment", "--input", clip.to_str().unwrap(), "--cam", "-0.5,0.2,1.3",
        "--out", aug.to_str().unwrap(), "--height", "16", "--width", "16",
    ]);
    assert_eq!(read_clip(&aug.join("clip_0000.davvid")).unwrap().dims(), [8, 3, 16, 16]);
}

#[test]
fn out_of_range_camera_is_rejected() {
    let out = dav(&["augment", "--input", "x", "--cam", "1.5,0,1", "--out", "y"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[-1, 1]"));
}

#[test]
fn generate_without_checkpoint_fails_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene.toml");
    std::fs::write(&scene, "direct-a-video-scene v1\ncaption = \"red circle background\"\n").unwrap();
    let out_dir = tmp.path().join("run");
    let missing = tmp.path().join("missing.ckpt");
    let out = dav(&[
        "generate", "--scene", scene.to_str().unwrap(),
        "--checkpoint", missing.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
    assert!(!out_dir.exists());

    let out = dav(&["generate", "--scene", scene.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(!out.status.success(), "a checkpoint is required without a manifest");
}

#[test]
fn failed_generate_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    untrained_checkpoint(&ckpt);
    let scene = tmp.path().join("scene.toml");
    std::fs::write(&scene, "direct-a-video-scene v1\ncaption = \"red circle background\"\n").unwrap();
    let out_dir = tmp.path().join("run");
    std::fs::create_dir(&out_dir).unwrap();
    std::fs::write(out_dir.join("notes.txt"), "keep me").unwrap();
    // a directory where the GIF should go makes the final write fail
    std::fs::create_dir(out_dir.join("clip.gif")).unwrap();
    let out = dav(&[
        "generate", "--scene", scene.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(),
        "--out", out_dir.to_str().unwrap(), "--steps", "2",
    ]);
    assert!(!out.status.success());
    assert_eq!(entries(&out_dir), ["clip.gif", "notes.txt"]);
}

#[test]
fn train_stage_two_requires_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("train");
    let out = dav(&["train", "--stage", "2", "--out", out_dir.to_str().unwrap(), "--steps", "1"]);
    assert!(!out.status.success());
    assert!(!out_dir.exists());
    assert!(!dav(&["train", "--stage", "3", "--out", out_dir.to_str().unwrap()]).status.success());
}

#[test]
fn generate_evaluate_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    untrained_checkpoint(&ckpt);
    let scene = tmp.path().join("scene.toml");
    std::fs::write(
        &scene,
        "direct-a-video-scene v1\ncaption = \"red circle background\"\n\n[[object]]\nwords = [\"red\", \"circle\"]\nstart = [0.1, 0.1, 0.5, 0.5]\nend = [0.5, 0.5, 0.9, 0.9]\n",
    )
    .unwrap();
    let runs = tmp.path().join("runs");
    let first = runs.join("a");
    ok(&[
        "generate", "--scene", scene.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(),
        "--out", first.to_str().unwrap(), "--steps", "3", "--cam", "0.5,0,1", "--seed", "4",
    ]);
    let files = entries(&first);
    for f in ["clip.davvid", "clip.gif", "flow.davflow", "frames", "manifest.json", "scene.toml"] {
        assert!(files.iter().any(|x| x == f), "{f} missing from {files:?}");
    }
    let second = runs.join("b");
    ok(&[
        "generate", "--manifest", first.join("manifest.json").to_str().unwrap(),
        "--out", second.to_str().unwrap(),
    ]);
    for f in ["clip.davvid", "flow.davflow"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap());
    }
    let report = ok(&["evaluate", "--runs", runs.to_str().unwrap()]);
    assert!(report.contains("2 run"), "{report}");
    assert!(runs.join("evaluation.md").exists() && runs.join("evaluation.jsonl").exists());
}

#[test]
fn lambda_tau_sweep_emits_a_four_by_four_table() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    untrained_checkpoint(&ckpt);
    let out_dir = tmp.path().join("sweep");
    ok(&[
        "sweep", "--checkpoint", ckpt.to_str().unwrap(), "--out", out_dir.to_str().unwrap(),
        "--lambda", "5,10,25,50", "--tau", "0.80,0.85,0.90,0.95", "--scenes", "1", "--steps", "1",
    ]);
    let md = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "md"))
        .expect("a markdown table");
    let text = std::fs::read_to_string(md).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with('|')).collect();
    assert_eq!(rows.len(), 2 + 4, "{text}");
    assert!(rows[0].contains("λ = 5") && rows[0].contains("λ = 50"));
    for (row, tau) in rows[2..].iter().zip(["0.80", "0.85", "0.90", "0.95"]) {
        assert!(row.contains(tau), "{row}");
        assert_eq!(row.matches('|').count(), 6, "{row}");
    }
}
