//! Shared plumbing for the commands, the examples and the acceptance
//! suite: checkpoints with metadata, datasets on disk, random evaluation
//! scenes and the camera / grounding evaluation loops.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scene::{SceneObject, SceneSpec};
use crate::camgen::{
    gen_synthetic_clip, read_clip, read_meta, write_clip, write_meta, CameraParams, ClipMeta, ObjectTrack,
    SynthConfig, SyntheticClip, SyntheticClipSpec,
};
use crate::caption::{Caption, ColorKey};
use crate::denoiser::{ddim_sample, DenoiserConfig, DenoiserModel, SamplerConfig, StepView};
use crate::diffkit::{write_checkpoint, Checkpoint, ParamStore, Real};
use crate::geometry::BBox;
use crate::metrics::{
    detect_boxes, estimate_flow, flow_error, flow_search_radius, gt_flow_from_camera, miou_ap50, DetectorConfig,
    GroundingScore, FLOW_BLOCK,
};
use crate::object_control::{bound_region, BlockGroup};
use crate::video::VideoClip;
use crate::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// JSON stored in a checkpoint's metadata field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: DenoiserConfig,
    /// Last training stage applied (0 for an untrained model).
    pub stage: u8,
    pub steps: usize,
    pub seed: u64,
    /// Hash of the checkpoint this one was trained from.
    pub parent_sha256: Option<String>,
}

pub struct LoadedModel {
    pub model: DenoiserModel,
    pub store: ParamStore<f32>,
    pub meta: CheckpointMeta,
    pub sha256: String,
}

/// A freshly initialized model (camera gates at zero).
pub fn fresh_model(config: DenoiserConfig) -> Result<(DenoiserModel, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let model = DenoiserModel::init(config, &mut store, &mut rng)?;
    Ok((model, store))
}

pub fn save_model(path: &Path, meta: &CheckpointMeta, store: &ParamStore<f32>) -> Result<String> {
    write_checkpoint(path, &Checkpoint::from_store(serde_json::to_string(meta)?, store))?;
    sha256_file(path)
}

pub fn load_model(path: &Path) -> Result<LoadedModel> {
    if !path.exists() {
        return Err(Error::invalid(format!("checkpoint {} does not exist", path.display())));
    }
    let bytes = std::fs::read(path)?;
    let ckpt = Checkpoint::from_bytes(&bytes, path)?;
    let meta: CheckpointMeta = serde_json::from_str(&ckpt.meta).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: format!("checkpoint metadata: {e}"),
    })?;
    let (model, mut store) = fresh_model(meta.model.clone())?;
    if ckpt.tensors.len() != store.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("{} tensors for a model with {} parameters", ckpt.tensors.len(), store.len()),
        });
    }
    ckpt.load_into(&mut store)?;
    Ok(LoadedModel {
        model,
        store,
        meta,
        sha256: sha256_hex(&bytes),
    })
}

/// `count` random stationary-camera clips; clip `i` depends only on
/// `(seed, i)`.
pub fn synth_dataset(count: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<SyntheticClip>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            gen_synthetic_clip(&SyntheticClipSpec::random(&mut rng, cfg))
        })
        .collect()
}

pub fn clip_meta(clip: &SyntheticClip, camera: Option<CameraParams>) -> ClipMeta {
    let words = clip.caption.words();
    ClipMeta {
        caption: words[1..words.len() - 1].iter().map(|w| w.to_string()).collect(),
        objects: clip
            .colors
            .iter()
            .zip(&clip.object_tokens)
            .zip(&clip.boxes)
            .map(|((&color, tokens), boxes)| ObjectTrack {
                color,
                token_positions: tokens.clone(),
                boxes: boxes.clone(),
            })
            .collect(),
        camera,
    }
}

/// Writes `clip_NNNN.davvid` plus its `.json` sidecar per clip.
pub fn write_dataset(dir: &Path, clips: &[SyntheticClip]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(2 * clips.len());
    for (i, c) in clips.iter().enumerate() {
        let path = dir.join(format!("clip_{i:04}.davvid"));
        write_clip(&path, &c.clip)?;
        let meta = path.with_extension("json");
        write_meta(&meta, &clip_meta(c, None))?;
        written.extend([path, meta]);
    }
    Ok(written)
}

/// Reads every `*.davvid` with a sidecar in `dir`, in name order.
pub fn read_dataset(dir: &Path) -> Result<Vec<SyntheticClip>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "davvid"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no .davvid clips in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let clip = read_clip(p)?;
            let meta = read_meta(&p.with_extension("json"))?;
            Ok(SyntheticClip {
                clip,
                caption: Caption::parse(&meta.caption.join(" "))?,
                object_tokens: meta.objects.iter().map(|o| o.token_positions.clone()).collect(),
                colors: meta.objects.iter().map(|o| o.color).collect(),
                boxes: meta.objects.into_iter().map(|o| o.boxes).collect(),
            })
        })
        .collect()
}

/// A random single-object scene ("<colour> <shape> background") whose
/// box travels in a straight line between two random positions.
pub fn random_object_scene<R: Rng + ?Sized>(rng: &mut R) -> SceneSpec {
    let synth = SyntheticClipSpec::random(rng, &SynthConfig::default());
    let obj = &synth.objects[0];
    let caption = Caption::parse(&format!("{} {} background", obj.color.word(), obj.shape.word()))
        .expect("vocabulary words");
    let size = obj.size;
    let lo = size / 2.0;
    let hi = 1.0 - size / 2.0;
    let mut centre = || (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
    let (a, b) = (centre(), centre());
    let start = BBox::from_center(a.0, a.1, size, size);
    let end = BBox::from_center(b.0, b.1, size, size);
    let mut scene = SceneSpec::minimal(&caption);
    scene.objects.push(SceneObject {
        words: vec![obj.color.word().into(), obj.shape.word().into()],
        start,
        end,
        track: vec![start.center(), end.center()],
    });
    scene.sampler.seed = rng.gen_range(0..1 << 31);
    scene
}

/// A random caption-only scene with the given camera.
pub fn random_camera_scene<R: Rng + ?Sized>(rng: &mut R, camera: CameraParams) -> SceneSpec {
    let synth = gen_synthetic_clip(&SyntheticClipSpec::random(rng, &SynthConfig::default()))
        .expect("random specs are valid");
    let mut scene = SceneSpec::minimal(&synth.caption);
    scene.camera = camera;
    scene.sampler.seed = rng.gen_range(0..1 << 31);
    scene
}

/// The colour word an object binds, used to find it with the detector.
pub fn object_color(obj: &SceneObject) -> Option<ColorKey> {
    ColorKey::ALL
        .into_iter()
        .find(|k| obj.words.iter().any(|w| w == k.word()))
}

/// Samples one scene; `scene.modulation` decides whether object control
/// is applied (`modulate`), the camera is bypassed when `bypass_camera`.
pub fn sample_scene(
    model: &DenoiserModel,
    store: &ParamStore<f32>,
    scene: &SceneSpec,
    modulate: bool,
    bypass_camera: bool,
    observer: Option<&mut dyn FnMut(&StepView<'_, f32>)>,
) -> Result<VideoClip> {
    let mut cfg: SamplerConfig = scene.sampler_config()?;
    if !modulate {
        cfg.modulation = None;
    }
    if bypass_camera {
        cfg.camera_cutoff = 1.0;
    }
    ddim_sample(model, store, &scene.caption()?, Some(scene.camera), &cfg, observer)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraScore {
    /// Mean estimated horizontal flow, pixels per frame pair.
    pub mean_dx: f64,
    pub mean_dy: f64,
    /// Mean normalized flow error against the commanded camera.
    pub flow_error: f64,
}

/// Flow of one clip scored against the commanded camera.
pub fn score_camera(clip: &VideoClip, camera: &CameraParams) -> Result<CameraScore> {
    let est = estimate_flow(clip, FLOW_BLOCK, flow_search_radius(clip.width))?;
    let gt = gt_flow_from_camera(camera, clip.frames, clip.height, clip.width)?;
    let (mean_dx, mean_dy) = est.flow.mean();
    Ok(CameraScore {
        mean_dx,
        mean_dy,
        flow_error: flow_error(&est.flow, &gt)?,
    })
}

/// Averages [`score_camera`] over scenes sampled with their cameras.
pub fn evaluate_camera(
    model: &DenoiserModel,
    store: &ParamStore<f32>,
    scenes: &[SceneSpec],
    bypass_camera: bool,
) -> Result<CameraScore> {
    if scenes.is_empty() {
        return Err(Error::invalid("no scenes to evaluate"));
    }
    let mut acc = CameraScore {
        mean_dx: 0.0,
        mean_dy: 0.0,
        flow_error: 0.0,
    };
    for s in scenes {
        let clip = sample_scene(model, store, s, false, bypass_camera, None)?;
        let sc = score_camera(&clip, &s.camera)?;
        acc.mean_dx += sc.mean_dx;
        acc.mean_dy += sc.mean_dy;
        acc.flow_error += sc.flow_error;
    }
    let n = scenes.len() as f64;
    Ok(CameraScore {
        mean_dx: acc.mean_dx / n,
        mean_dy: acc.mean_dy / n,
        flow_error: acc.flow_error / n,
    })
}

/// Detector score of one clip against a scene's commanded boxes; `None`
/// when no object carries a colour word.
pub fn score_grounding(clip: &VideoClip, scene: &SceneSpec) -> Result<Option<GroundingScore>> {
    let mut targets = Vec::new();
    if let Some(spec) = scene.modulation_spec()? {
        for (obj, traj) in scene.objects.iter().zip(&spec.objects) {
            if let Some(key) = object_color(obj) {
                targets.push((key, traj.boxes.clone()));
            }
        }
    }
    if targets.is_empty() {
        return Ok(None);
    }
    let keys: Vec<ColorKey> = targets.iter().map(|(k, _)| *k).collect();
    let det = detect_boxes(clip, &keys, &DetectorConfig::default())?;
    miou_ap50(&det, &targets).map(Some)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub score: GroundingScore,
    /// Share of object-token cross-attention mass that falls inside the
    /// object's box, over amplified blocks and the first two steps.
    pub attention_in_box: f64,
}

/// Samples every scene (with or without modulation) and pools detector
/// scores and the attention-mass fraction.
pub fn evaluate_grounding(
    model: &DenoiserModel,
    store: &ParamStore<f32>,
    scenes: &[SceneSpec],
    modulate: bool,
) -> Result<GroundingResult> {
    let (gh, gw) = model.config.grid();
    let (p, heads, blocks) = (gh * gw, model.config.heads, model.config.blocks);
    let (mut ious, mut ap_hits, mut pairs) = (0.0, 0.0, 0usize);
    let (mut frac_sum, mut frac_n) = (0.0, 0usize);
    for scene in scenes {
        let spec = scene
            .modulation_spec()?
            .ok_or_else(|| Error::invalid("grounding scenes need at least one object"))?;
        let caption_len = scene.caption()?.len();
        let mut err = None;
        let mut obs = |v: &StepView<'_, f32>| {
            if v.step >= 2 || err.is_some() {
                return;
            }
            for (b, &attn) in v.output.cross_attention.iter().enumerate() {
                if !spec.placement.enabled(BlockGroup::of(b, blocks)) {
                    continue;
                }
                let Some(probs) = v.tape.attention_probs(attn) else {
                    err = Some(Error::invalid("cross-attention node recorded no probabilities"));
                    return;
                };
                for traj in &spec.objects {
                    let (mut inside, mut total) = (0.0, 0.0);
                    for (f, bx) in traj.boxes.iter().enumerate() {
                        let region = bound_region(bx, gh, gw);
                        for h in 0..heads {
                            for q in 0..p {
                                let row = ((f * heads + h) * p + q) * caption_len;
                                for &tok in &traj.token_positions {
                                    let w = probs[row + tok].as_f64();
                                    total += w;
                                    if region.contains(&q) {
                                        inside += w;
                                    }
                                }
                            }
                        }
                    }
                    if total > 0.0 {
                        frac_sum += inside / total;
                        frac_n += 1;
                    }
                }
            }
        };
        let clip = sample_scene(model, store, scene, modulate, false, Some(&mut obs))?;
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(s) = score_grounding(&clip, scene)? {
            ious += s.miou * s.pairs as f64;
            ap_hits += s.ap50 / 100.0 * s.pairs as f64;
            pairs += s.pairs;
        }
    }
    if pairs == 0 {
        return Err(Error::invalid("no coloured objects to score"));
    }
    Ok(GroundingResult {
        score: GroundingScore {
            miou: ious / pairs as f64,
            ap50: 100.0 * ap_hits / pairs as f64,
            pairs,
        },
        attention_in_box: if frac_n == 0 { 0.0 } else { frac_sum / frac_n as f64 },
    })
}
