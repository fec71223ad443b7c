use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::args::{
    AugmentArgs, Cli, Command, EvaluateArgs, GenerateArgs, SceneOverrides, SweepArgs, SweepGrid, SynthdataArgs,
    TrainArgs,
};
use super::export::{write_frames_ppm, write_gif};
use super::harness::{
    evaluate_grounding, fresh_model, load_model, object_color, random_object_scene, read_dataset, sample_scene,
    save_model, score_camera, score_grounding, synth_dataset, CheckpointMeta, GroundingResult,
};
use super::manifest::{OutputGuard, RunManifest, MANIFEST_FILE, MANIFEST_FORMAT};
use super::scene::{parse_scene, OutputFormat, SceneSpec};
use crate::camgen::{
    aug_with_cam_motion, compute_crop_boxes, read_clip, read_meta, write_clip, write_meta, ClipMeta, ObjectTrack,
    SynthConfig,
};
use crate::denoiser::{train, DenoiserConfig, LossRecord, Stage, TrainConfig};
use crate::geometry::BBox;
use crate::metrics::{append_jsonl, estimate_flow, flow_search_radius, write_flow, MetricRecord, FLOW_BLOCK};
use crate::object_control::Placement;
use crate::{Error, Result};

/// Runs one command and returns the report to print.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synthdata(a) => synthdata(&a),
        Command::Augment(a) => augment(&a),
        Command::Train(a) => train_command(&a),
        Command::Generate(a) => generate(&a).map(|m| summarize_run(&m)),
        Command::Evaluate(a) => evaluate(&a),
        Command::Sweep(a) => sweep(&a),
    }
}

pub fn synthdata(args: &SynthdataArgs) -> Result<String> {
    let cfg = SynthConfig {
        frames: args.frames,
        height: args.size,
        width: args.size,
        max_objects: args.max_objects.max(1),
        ..SynthConfig::default()
    };
    let mut guard = OutputGuard::new(&args.out)?;
    let clips = synth_dataset(args.count, args.seed, &cfg)?;
    let dataset = guard.file("dataset.json");
    guard.track(
        (0..clips.len())
            .flat_map(|i| ["davvid", "json"].map(|e| args.out.join(format!("clip_{i:04}.{e}")))),
    );
    super::harness::write_dataset(&args.out, &clips)?;
    std::fs::write(
        &dataset,
        serde_json::to_string_pretty(&serde_json::json!({
            "count": args.count,
            "seed": args.seed,
            "config": cfg,
        }))?,
    )?;
    guard.commit();
    Ok(format!(
        "wrote {} clips ({}×{}×{}) to {}",
        clips.len(),
        cfg.frames,
        cfg.height,
        cfg.width,
        args.out.display()
    ))
}

/// Maps a source-normalized box into the frame-`f` crop window.
fn box_through_crop(b: &BBox, crop: &BBox) -> BBox {
    let (cw, ch) = (crop.width(), crop.height());
    BBox::new(
        (b.x1 - crop.x1) / cw,
        (b.y1 - crop.y1) / ch,
        (b.x2 - crop.x1) / cw,
        (b.y2 - crop.y1) / ch,
    )
    .clamp_unit()
}

pub fn augment(args: &AugmentArgs) -> Result<String> {
    let inputs: Vec<PathBuf> = if args.input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&args.input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        v.retain(|p| p.extension().is_some_and(|e| e == "davvid"));
        v.sort();
        v
    } else {
        vec![args.input.clone()]
    };
    if inputs.is_empty() {
        return Err(Error::invalid(format!("no .davvid clips at {}", args.input.display())));
    }
    let mut guard = OutputGuard::new(&args.out)?;
    for input in &inputs {
        let src = read_clip(input)?;
        let (h, w) = (args.height.unwrap_or(src.height), args.width.unwrap_or(src.width));
        let out = aug_with_cam_motion(&src, &args.cam, h, w)?;
        let name = input.file_name().expect("read_clip succeeded on a file");
        let path = guard.file(name);
        write_clip(&path, &out)?;
        let sidecar = input.with_extension("json");
        let mut meta = if sidecar.exists() { read_meta(&sidecar)? } else { ClipMeta::default() };
        let crops = compute_crop_boxes(&args.cam, src.frames)?;
        for obj in &mut meta.objects {
            for (b, crop) in obj.boxes.iter_mut().zip(&crops.normalized) {
                *b = box_through_crop(b, crop);
            }
        }
        meta.camera = Some(args.cam);
        write_meta(&guard.file(Path::new(name).with_extension("json")), &meta)?;
    }
    guard.commit();
    Ok(format!(
        "augmented {} clip(s) with camera ({}, {}, {}) into {}",
        inputs.len(),
        args.cam.cx,
        args.cam.cy,
        args.cam.cz,
        args.out.display()
    ))
}

pub fn train_command(args: &TrainArgs) -> Result<String> {
    let stage = Stage::from_number(args.stage)?;
    let (model, mut store, parent, start_steps) = match (&args.checkpoint, stage) {
        (Some(path), _) => {
            let l = load_model(path)?;
            (l.model, l.store, Some(l.sha256), l.meta.steps)
        }
        (None, Stage::Camera) => {
            return Err(Error::invalid("stage 2 trains on top of a base model: pass --checkpoint"));
        }
        (None, Stage::Base) => {
            let (m, s) = fresh_model(DenoiserConfig::default())?;
            (m, s, None, 0)
        }
    };
    let sources = match &args.data {
        Some(dir) => read_dataset(dir)?,
        None => synth_dataset(args.clips, args.seed, &SynthConfig::default())?,
    };
    let mut cfg = TrainConfig {
        steps: args.steps,
        batch: args.batch,
        seed: args.seed,
        ..TrainConfig::new(stage)
    };
    if let Some(lr) = args.lr {
        cfg.optimizer.lr = lr;
    }

    let mut guard = OutputGuard::new(&args.out)?;
    let ckpt = guard.file(format!("stage{}.ckpt", args.stage));
    let log = guard.file(format!("loss_stage{}.jsonl", args.stage));
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let started = Instant::now();
    let mut write_err = None;
    let mut window = (0.0, 0usize);
    let history = train(&model, &mut store, &sources, &cfg, &mut rng, |r: &LossRecord| {
        if write_err.is_none() {
            write_err = append_jsonl(&log, r).err();
        }
        window = (window.0 + r.loss, window.1 + 1);
        if (r.step + 1) % 200 == 0 {
            eprintln!(
                "stage {} step {:>5}/{} loss {:.4} ({:.0} s)",
                r.stage,
                r.step + 1,
                cfg.steps,
                window.0 / window.1 as f64,
                started.elapsed().as_secs_f64()
            );
            window = (0.0, 0);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let meta = CheckpointMeta {
        model: model.config.clone(),
        stage: args.stage,
        steps: start_steps + args.steps,
        seed: args.seed,
        parent_sha256: parent,
    };
    let sha = save_model(&ckpt, &meta, &store)?;
    guard.commit();
    let tail = &history[history.len().saturating_sub(100)..];
    let mean_tail = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    Ok(format!(
        "stage {} finished {} steps in {:.0} s; mean loss over the last {} steps {:.4}\ncheckpoint {} (sha256 {})",
        args.stage,
        args.steps,
        started.elapsed().as_secs_f64(),
        tail.len(),
        mean_tail,
        ckpt.display(),
        sha
    ))
}

fn apply_overrides(scene: &mut SceneSpec, o: &SceneOverrides) -> Result<()> {
    if let Some(c) = o.cam {
        scene.camera = c;
    }
    if let Some(v) = o.seed {
        scene.sampler.seed = v;
    }
    if let Some(v) = o.steps {
        scene.sampler.steps = v;
    }
    if let Some(v) = o.guidance {
        scene.sampler.guidance = v;
    }
    if let Some(v) = o.cutoff {
        scene.sampler.cutoff = v;
    }
    if let Some(v) = o.lambda {
        scene.modulation.lambda = v;
    }
    if let Some(v) = o.tau {
        scene.modulation.tau = v;
    }
    if let Some(v) = o.placement {
        scene.modulation.placement = v;
    }
    scene.validate()
}

/// Samples the scene and writes clip, sidecar, estimated flow, frames,
/// GIF and the run manifest into `args.out`.
pub fn generate(args: &GenerateArgs) -> Result<RunManifest> {
    let (scene, ckpt_path, expected_sha) = match &args.manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            (m.scene, m.checkpoint, Some(m.checkpoint_sha256))
        }
        None => {
            let mut scene = parse_scene(args.scene.as_ref().expect("clap requires --scene"))?;
            apply_overrides(&mut scene, &args.overrides)?;
            (scene, args.checkpoint.clone().expect("clap requires --checkpoint"), None)
        }
    };
    let loaded = load_model(&ckpt_path)?;
    if let Some(want) = expected_sha {
        if want != loaded.sha256 {
            return Err(Error::invalid(format!(
                "checkpoint {} has sha256 {} but the manifest expects {want}",
                ckpt_path.display(),
                loaded.sha256
            )));
        }
    }
    let cfg = &loaded.model.config;
    let dims = (scene.output.frames, scene.output.height, scene.output.width);
    if dims != (cfg.frames, cfg.height, cfg.width) {
        return Err(Error::invalid(format!(
            "scene asks for {}×{}×{} but the checkpoint model produces {}×{}×{}",
            dims.0, dims.1, dims.2, cfg.frames, cfg.height, cfg.width
        )));
    }

    let mut guard = OutputGuard::new(&args.out)?;
    let out = guard.dir().to_path_buf();
    let clip = sample_scene(&loaded.model, &loaded.store, &scene, true, false, None)?;
    let mut manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        scene: scene.clone(),
        checkpoint: ckpt_path.clone(),
        checkpoint_sha256: loaded.sha256.clone(),
        seed: scene.sampler.seed,
        outputs: Vec::new(),
        metrics: Default::default(),
    };

    let clip_path = guard.file("clip.davvid");
    write_clip(&clip_path, &clip)?;
    manifest.record_output(&out, &clip_path)?;

    let modulation = scene.modulation_spec()?;
    let mut objects = Vec::new();
    if let Some(spec) = &modulation {
        for (obj, traj) in scene.objects.iter().zip(&spec.objects) {
            if let Some(color) = object_color(obj) {
                objects.push(ObjectTrack {
                    color,
                    token_positions: traj.token_positions.clone(),
                    boxes: traj.boxes.clone(),
                });
            }
        }
    }
    let sidecar = guard.file("clip.json");
    write_meta(
        &sidecar,
        &ClipMeta {
            caption: scene.caption.clone(),
            objects,
            camera: Some(scene.camera),
        },
    )?;
    manifest.record_output(&out, &sidecar)?;

    let est = estimate_flow(&clip, FLOW_BLOCK, flow_search_radius(clip.width))?;
    let flow_path = guard.file("flow.davflow");
    write_flow(&flow_path, &est.flow)?;
    manifest.record_output(&out, &flow_path)?;

    let scene_path = guard.file("scene.toml");
    std::fs::write(&scene_path, scene.to_scene_string())?;
    manifest.record_output(&out, &scene_path)?;

    if scene.output.formats.contains(&OutputFormat::Ppm) {
        let dir = guard.subdir("frames")?;
        for p in write_frames_ppm(&dir, &clip)? {
            manifest.record_output(&out, &p)?;
        }
    }
    if scene.output.formats.contains(&OutputFormat::Gif) {
        let gif = guard.file("clip.gif");
        write_gif(&gif, &clip, 8)?;
        manifest.record_output(&out, &gif)?;
    }

    let cam = score_camera(&clip, &scene.camera)?;
    manifest.metrics.insert("flow_error".into(), cam.flow_error);
    manifest.metrics.insert("mean_flow_x".into(), cam.mean_dx);
    manifest.metrics.insert("mean_flow_y".into(), cam.mean_dy);
    if let Some(g) = score_grounding(&clip, &scene)? {
        manifest.metrics.insert("miou".into(), g.miou);
        manifest.metrics.insert("ap50".into(), g.ap50);
    }
    manifest.write(&guard.file(MANIFEST_FILE))?;
    guard.commit();
    Ok(manifest)
}

fn summarize_run(m: &RunManifest) -> String {
    let mut s = format!(
        "generated {} files for \"{}\" (seed {})\n",
        m.outputs.len(),
        m.scene.caption.join(" "),
        m.seed
    );
    for (k, v) in &m.metrics {
        let _ = writeln!(s, "  {k:<12} {v:.4}");
    }
    s
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    if root.join(MANIFEST_FILE).exists() {
        dirs.push(root.to_path_buf());
    }
    let mut subs: Vec<PathBuf> = std::fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    subs.retain(|p| p.join(MANIFEST_FILE).exists());
    subs.sort();
    dirs.extend(subs);
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no run manifests under {}", root.display())));
    }
    Ok(dirs)
}

/// Re-scores every run's clip and writes `evaluation.jsonl` and
/// `evaluation.md`.
pub fn evaluate(args: &EvaluateArgs) -> Result<String> {
    let dirs = run_dirs(&args.runs)?;
    let out = args.out.clone().unwrap_or_else(|| args.runs.clone());
    let mut guard = OutputGuard::new(&out)?;
    let jsonl = guard.file("evaluation.jsonl");
    if jsonl.exists() {
        std::fs::remove_file(&jsonl)?;
    }
    let mut table = String::from(
        "| run | camera | mean flow x | flow error | mIoU | AP50 |\n|---|---|---|---|---|---|\n",
    );
    let (mut fe_sum, mut iou_sum, mut iou_n) = (0.0, 0.0, 0usize);
    for dir in &dirs {
        let m = RunManifest::read(&dir.join(MANIFEST_FILE))?;
        let clip = read_clip(&dir.join("clip.davvid"))?;
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        let cam = score_camera(&clip, &m.scene.camera)?;
        let g = score_grounding(&clip, &m.scene)?;
        fe_sum += cam.flow_error;
        let rec = |metric: &str, value: f64| {
            append_jsonl(
                &jsonl,
                &MetricRecord {
                    run: name.clone(),
                    metric: metric.into(),
                    value,
                    context: serde_json::json!({ "camera": m.scene.camera, "seed": m.seed }),
                },
            )
        };
        rec("flow_error", cam.flow_error)?;
        rec("mean_flow_x", cam.mean_dx)?;
        let (miou, ap) = match g {
            Some(g) => {
                rec("miou", g.miou)?;
                rec("ap50", g.ap50)?;
                iou_sum += g.miou;
                iou_n += 1;
                (format!("{:.3}", g.miou), format!("{:.1}", g.ap50))
            }
            None => ("–".into(), "–".into()),
        };
        let c = m.scene.camera;
        let _ = writeln!(
            table,
            "| {name} | ({}, {}, {}) | {:.3} | {:.4} | {miou} | {ap} |",
            c.cx, c.cy, c.cz, cam.mean_dx, cam.flow_error
        );
    }
    let _ = writeln!(table, "\nmean flow error {:.4} over {} run(s)", fe_sum / dirs.len() as f64, dirs.len());
    if iou_n > 0 {
        let _ = writeln!(table, "mean mIoU {:.3} over {iou_n} run(s) with objects", iou_sum / iou_n as f64);
    }
    std::fs::write(guard.file("evaluation.md"), &table)?;
    guard.commit();
    Ok(table)
}

fn sweep_scenes(args: &SweepArgs) -> Result<Vec<SceneSpec>> {
    let mut scenes = match &args.scene {
        Some(p) => vec![parse_scene(p)?],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.scenes).map(|_| random_object_scene(&mut rng)).collect()
        }
    };
    if scenes.iter().any(|s| s.objects.is_empty()) {
        return Err(Error::invalid("sweep scenes need at least one object"));
    }
    if let Some(steps) = args.steps {
        for s in &mut scenes {
            s.sampler.steps = steps;
        }
    }
    Ok(scenes)
}

fn cell(r: &GroundingResult) -> String {
    format!("{:.3} / {:.1}", r.score.miou, r.score.ap50)
}

/// Grounding scores over a (λ, τ) grid or over amplification placements;
/// writes `sweep_<grid>.md` and `sweep_<grid>.jsonl`.
pub fn sweep(args: &SweepArgs) -> Result<String> {
    let loaded = load_model(&args.checkpoint)?;
    let scenes = sweep_scenes(args)?;
    let with = |f: &dyn Fn(&mut SceneSpec)| -> Vec<SceneSpec> {
        scenes
            .iter()
            .cloned()
            .map(|mut s| {
                f(&mut s);
                s
            })
            .collect()
    };
    let eval = |sc: &[SceneSpec], modulate: bool| evaluate_grounding(&loaded.model, &loaded.store, sc, modulate);

    let mut guard = OutputGuard::new(&args.out)?;
    let tag = match args.grid {
        SweepGrid::LambdaTau => "lambda_tau",
        SweepGrid::Placement => "placement",
    };
    let jsonl = guard.file(format!("sweep_{tag}.jsonl"));
    if jsonl.exists() {
        std::fs::remove_file(&jsonl)?;
    }
    let record = |metric: &str, r: &GroundingResult, ctx: serde_json::Value| -> Result<()> {
        for (m, v) in [("miou", r.score.miou), ("ap50", r.score.ap50), ("attention_in_box", r.attention_in_box)] {
            append_jsonl(
                &jsonl,
                &MetricRecord {
                    run: format!("sweep_{metric}"),
                    metric: m.into(),
                    value: v,
                    context: ctx.clone(),
                },
            )?;
        }
        Ok(())
    };

    let baseline = eval(&scenes, false)?;
    record(tag, &baseline, serde_json::json!({ "modulation": "off" }))?;
    let mut table = format!(
        "{} scene(s), cells are mIoU / AP50 (%); without modulation: {}\n\n",
        scenes.len(),
        cell(&baseline)
    );
    match args.grid {
        SweepGrid::LambdaTau => {
            if args.lambda.is_empty() || args.tau.is_empty() {
                return Err(Error::invalid("the lambda-tau grid needs at least one λ and one τ"));
            }
            table.push_str("| |");
            for l in &args.lambda {
                let _ = write!(table, " λ = {l} |");
            }
            table.push_str("\n|---|");
            table.push_str(&"---|".repeat(args.lambda.len()));
            table.push('\n');
            for &tau in &args.tau {
                let _ = write!(table, "| τ = {tau:.2}T |");
                for &lambda in &args.lambda {
                    let sc = with(&|s: &mut SceneSpec| {
                        s.modulation.lambda = lambda;
                        s.modulation.tau = tau;
                        if let Some(p) = args.placement {
                            s.modulation.placement = p;
                        }
                    });
                    for s in &sc {
                        s.validate()?;
                    }
                    let r = eval(&sc, true)?;
                    record(tag, &r, serde_json::json!({ "lambda": lambda, "tau": tau }))?;
                    let _ = write!(table, " {} |", cell(&r));
                }
                table.push('\n');
            }
        }
        SweepGrid::Placement => {
            let columns: Vec<Placement> = ["E", "M", "D", "E,M", "M,D", "E,D", "E,M,D"]
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_>>()?;
            let mut rows = [String::from("| mIoU |"), String::from("| AP50 (%) |"), String::from("| attention in box |")];
            let mut header = String::from("| |");
            for p in &columns {
                let _ = write!(header, " {} |", p.to_string().replace(',', "+"));
                let sc = with(&|s: &mut SceneSpec| s.modulation.placement = *p);
                let r = eval(&sc, true)?;
                record(tag, &r, serde_json::json!({ "placement": p.to_string() }))?;
                let _ = write!(rows[0], " {:.3} |", r.score.miou);
                let _ = write!(rows[1], " {:.1} |", r.score.ap50);
                let _ = write!(rows[2], " {:.3} |", r.attention_in_box);
            }
            let _ = writeln!(table, "{header}\n|---|{}", "---|".repeat(columns.len()));
            for r in rows {
                let _ = writeln!(table, "{r}");
            }
        }
    }
    std::fs::write(guard.file(format!("sweep_{tag}.md")), &table)?;
    guard.commit();
    Ok(table)
}
