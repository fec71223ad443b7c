use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::T_MAX;
use crate::camera_control::{camera_module_forward, CameraEmbedder, CameraModule, NUM_FREQS};
use crate::camgen::CameraParams;
use crate::caption::VOCAB;
use crate::diffkit::nn::{LayerNorm, Linear};
use crate::diffkit::{ParamStore, Real, Tape, Tensor, Var};
use crate::object_control::{modulation_bias, BlockGroup, ModulationSpec};
use crate::{Error, Result};

/// Prefix shared by every camera-conditioning parameter (embedder and
/// per-block modules).
pub const CAMERA_PREFIX: &str = "camera.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_mult: usize,
    pub camera_freqs: usize,
    pub init_seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            channels: 3,
            height: 16,
            width: 16,
            patch: 4,
            dim: 64,
            heads: 4,
            blocks: 4,
            ffn_mult: 4,
            camera_freqs: NUM_FREQS,
            init_seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn tokens_per_frame(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.frames,
            self.channels,
            self.height,
            self.width,
            self.patch,
            self.dim,
            self.heads,
            self.blocks,
            self.ffn_mult,
            self.camera_freqs,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid(format!("zero-sized model dimension in {self:?}")));
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::invalid(format!(
                "patch {} does not tile {}×{}",
                self.patch, self.height, self.width
            )));
        }
        if self.dim % self.heads != 0 || self.dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "width {} must be even and divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// `[F, C, H, W]` → `[F, P, p·p·C]`, tokens row-major over the patch grid,
/// features ordered `(c, dy, dx)`.
pub fn patchify<T: Real>(x: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let [f, c, h, w] = x.shape()[..] else {
        return Err(Error::shape("patchify", format!("{:?} is not 4-D", x.shape())));
    };
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::shape("patchify", format!("{h}×{w} with patch {patch}")));
    }
    let (gh, gw, pd) = (h / patch, w / patch, patch * patch * c);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for fi in 0..f {
        for gy in 0..gh {
            for gx in 0..gw {
                let tok = (fi * gh * gw + gy * gw + gx) * pd;
                for ci in 0..c {
                    for dy in 0..patch {
                        let s = ((fi * c + ci) * h + gy * patch + dy) * w + gx * patch;
                        let o = tok + (ci * patch + dy) * patch;
                        out[o..o + patch].copy_from_slice(&src[s..s + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(&[f, gh * gw, pd], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(tokens: &Tensor<T>, shape: [usize; 4], patch: usize) -> Result<Tensor<T>> {
    let [f, c, h, w] = shape;
    let (gh, gw, pd) = (h / patch, w / patch, patch * patch * c);
    if tokens.shape() != [f, gh * gw, pd] {
        return Err(Error::shape(
            "unpatchify",
            format!("{:?} for clip {shape:?} patch {patch}", tokens.shape()),
        ));
    }
    let src = tokens.data();
    let mut out = vec![T::zero(); src.len()];
    for fi in 0..f {
        for gy in 0..gh {
            for gx in 0..gw {
                let tok = (fi * gh * gw + gy * gw + gx) * pd;
                for ci in 0..c {
                    for dy in 0..patch {
                        let o = ((fi * c + ci) * h + gy * patch + dy) * w + gx * patch;
                        let s = tok + (ci * patch + dy) * patch;
                        out[o..o + patch].copy_from_slice(&src[s..s + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(&shape, out)
}

/// Sinusoidal timestep features of width `dim` (sines then cosines).
pub fn timestep_features(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| (-(10_000f64.ln()) * k as f64 / half as f64).exp())
        .collect();
    let t = t as f64;
    freqs
        .iter()
        .map(|f| (t * f).sin())
        .chain(freqs.iter().map(|f| (t * f).cos()))
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attn {
    fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        out_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::init(store, &format!("{name}.q"), dim, dim, false, 1.0, rng)?,
            k: Linear::init(store, &format!("{name}.k"), dim, dim, false, 1.0, rng)?,
            v: Linear::init(store, &format!("{name}.v"), dim, dim, false, 1.0, rng)?,
            o: Linear::init(store, &format!("{name}.o"), dim, dim, true, out_gain, rng)?,
        })
    }
}

/// One spatial → text → temporal → camera → feed-forward block.
#[derive(Clone, Debug)]
pub struct Block {
    pub group: BlockGroup,
    ln_spatial: LayerNorm,
    spatial: Attn,
    ln_text: LayerNorm,
    text: Attn,
    ln_temporal: LayerNorm,
    temporal: Attn,
    pub camera: CameraModule,
    ln_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

/// Everything besides the noisy clip and timestep that steers a forward
/// pass.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning<'a> {
    /// Caption token ids, `<sos>` … `<eos>`.
    pub caption: &'a [usize],
    /// `None` skips every camera module (the base model).
    pub camera: Option<CameraParams>,
    /// Spatial cross-attention modulation; `None` leaves it unmodulated.
    pub modulation: Option<&'a ModulationSpec>,
}

/// Recorded outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Predicted noise, token layout `[F, P, p·p·C]`.
    pub eps: Var,
    /// Text cross-attention nodes per block, in block order.
    pub cross_attention: Vec<Var>,
}

/// Patch-token video transformer predicting the diffusion noise.
#[derive(Clone, Debug)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    patch_in: Linear,
    pos_spatial: crate::diffkit::ParamId,
    pos_temporal: crate::diffkit::ParamId,
    tokens: crate::diffkit::ParamId,
    time_in: Linear,
    time_out: Linear,
    pub camera_embed: CameraEmbedder,
    pub blocks: Vec<Block>,
    ln_out: LayerNorm,
    patch_out: Linear,
}

impl DenoiserModel {
    /// Registers all parameters in `store`. Camera gates start at 0, so the
    /// fresh model behaves exactly like its camera-free base.
    pub fn init<T: Real, R: Rng + ?Sized>(
        config: DenoiserConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let p = config.tokens_per_frame();
        let out_gain = 1.0 / (2.0 * config.blocks as f64).sqrt();
        let small = |rng: &mut R, n: usize, std: f64| -> Vec<T> {
            (0..n)
                .map(|_| T::cast_from(std * (rng.gen::<f64>() * 2.0 - 1.0) * 3f64.sqrt()))
                .collect()
        };
        let patch_in = Linear::init(store, "patch_in", config.patch_dim(), d, true, 1.0, rng)?;
        let pos_spatial = store.add("pos.spatial", Tensor::new(&[p, d], small(rng, p * d, 0.1))?)?;
        let pos_temporal = store.add(
            "pos.temporal",
            Tensor::new(&[config.frames, 1, d], small(rng, config.frames * d, 0.1))?,
        )?;
        let tokens = store.add(
            "text.tokens",
            Tensor::new(&[VOCAB.len(), d], small(rng, VOCAB.len() * d, 1.0))?,
        )?;
        let time_in = Linear::init(store, "time.0", d, d, true, 1.0, rng)?;
        let time_out = Linear::init(store, "time.1", d, d, true, 1.0, rng)?;
        let camera_embed =
            CameraEmbedder::init(store, &format!("{CAMERA_PREFIX}embed"), d, config.camera_freqs, rng)?;
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let n = format!("blocks.{i}");
            blocks.push(Block {
                group: BlockGroup::of(i, config.blocks),
                ln_spatial: LayerNorm::init(store, &format!("{n}.ln_spatial"), d)?,
                spatial: Attn::init(store, &format!("{n}.spatial"), d, out_gain, rng)?,
                ln_text: LayerNorm::init(store, &format!("{n}.ln_text"), d)?,
                text: Attn::init(store, &format!("{n}.text"), d, out_gain, rng)?,
                ln_temporal: LayerNorm::init(store, &format!("{n}.ln_temporal"), d)?,
                temporal: Attn::init(store, &format!("{n}.temporal"), d, out_gain, rng)?,
                camera: CameraModule::init(store, &format!("{CAMERA_PREFIX}block{i}"), d, config.heads, rng)?,
                ln_ffn: LayerNorm::init(store, &format!("{n}.ln_ffn"), d)?,
                ffn_in: Linear::init(store, &format!("{n}.ffn.0"), d, d * config.ffn_mult, true, 1.0, rng)?,
                ffn_out: Linear::init(
                    store,
                    &format!("{n}.ffn.1"),
                    d * config.ffn_mult,
                    d,
                    true,
                    out_gain,
                    rng,
                )?,
            });
        }
        let ln_out = LayerNorm::init(store, "ln_out", d)?;
        let patch_out = Linear::init(store, "patch_out", d, config.patch_dim(), true, 0.0, rng)?;
        Ok(Self {
            config,
            patch_in,
            pos_spatial,
            pos_temporal,
            tokens,
            time_in,
            time_out,
            camera_embed,
            blocks,
            ln_out,
            patch_out,
        })
    }

    pub fn is_camera_param(name: &str) -> bool {
        name.starts_with(CAMERA_PREFIX)
    }

    /// Records the forward pass of noisy clip `x_t: [F, C, H, W]` at
    /// timestep `t`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x_t: &Tensor<T>,
        t: usize,
        cond: &Conditioning<'_>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        if x_t.shape() != cfg.clip_shape() {
            return Err(Error::shape(
                "DenoiserModel::forward",
                format!("input {:?}, model expects {:?}", x_t.shape(), cfg.clip_shape()),
            ));
        }
        if t > T_MAX {
            return Err(Error::invalid(format!("timestep {t} beyond horizon {T_MAX}")));
        }
        let caption_len = cond.caption.len();
        let (f, p, d) = (cfg.frames, cfg.tokens_per_frame(), cfg.dim);

        let patches = tape.constant(patchify(x_t, cfg.patch)?);
        let mut x = self.patch_in.forward(tape, store, patches)?;
        let ps = tape.param(store, self.pos_spatial);
        x = tape.add_broadcast(x, ps)?;
        let pt = tape.param(store, self.pos_temporal);
        x = tape.add_broadcast(x, pt)?;
        let tf = Tensor::from_f64(&[1, d], &timestep_features(t, d))?;
        let tf = tape.constant(tf);
        let temb = self.time_in.forward(tape, store, tf)?;
        let temb = tape.silu(temb);
        let temb = self.time_out.forward(tape, store, temb)?;
        x = tape.add_broadcast(x, temb)?;

        let table = tape.param(store, self.tokens);
        let text = tape.gather(table, cond.caption)?;
        let text = tape.reshape(text, &[1, caption_len, d])?;

        let camera = match cond.camera {
            Some(params) => {
                params.validate()?;
                Some(self.camera_embed.forward(tape, store, &params)?)
            }
            None => None,
        };
        let biases = match cond.modulation {
            Some(spec) if !spec.is_inactive() => Some((
                self.frame_bias::<T>(spec, t, caption_len, true)?,
                self.frame_bias::<T>(spec, t, caption_len, false)?,
            )),
            _ => None,
        };

        let mut cross_attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let h = block.ln_spatial.forward(tape, store, x)?;
            let a = self.attend(tape, store, &block.spatial, h, h, None)?;
            x = tape.add(x, a)?;

            let h = block.ln_text.forward(tape, store, x)?;
            let bias = biases.as_ref().map(|(amp, plain)| {
                let amplify = cond.modulation.is_some_and(|m| m.placement.enabled(block.group));
                if amplify {
                    amp
                } else {
                    plain
                }
            });
            let q = block.text.q.forward(tape, store, h)?;
            let k = block.text.k.forward(tape, store, text)?;
            let v = block.text.v.forward(tape, store, text)?;
            let attn = tape.attention(q, k, v, cfg.heads, bias)?;
            cross_attention.push(attn);
            let a = block.text.o.forward(tape, store, attn)?;
            x = tape.add(x, a)?;

            let h = block.ln_temporal.forward(tape, store, x)?;
            let h = tape.transpose01(h)?;
            let a = self.attend(tape, store, &block.temporal, h, h, None)?;
            let a = tape.transpose01(a)?;
            x = tape.add(x, a)?;

            if let Some((e_xy, e_z)) = camera {
                x = camera_module_forward(tape, store, &block.camera, x, e_xy, e_z)?;
            }

            let h = block.ln_ffn.forward(tape, store, x)?;
            let h = block.ffn_in.forward(tape, store, h)?;
            let h = tape.gelu(h);
            let h = block.ffn_out.forward(tape, store, h)?;
            x = tape.add(x, h)?;
        }
        let h = self.ln_out.forward(tape, store, x)?;
        let eps = self.patch_out.forward(tape, store, h)?;
        debug_assert_eq!(tape.shape(eps), [f, p, cfg.patch_dim()]);
        Ok(ForwardOutput {
            eps,
            cross_attention,
        })
    }

    fn attend<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        attn: &Attn,
        xq: Var,
        xkv: Var,
        bias: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let q = attn.q.forward(tape, store, xq)?;
        let k = attn.k.forward(tape, store, xkv)?;
        let v = attn.v.forward(tape, store, xkv)?;
        let o = tape.attention(q, k, v, self.config.heads, bias)?;
        attn.o.forward(tape, store, o)
    }

    /// Stacked per-frame modulation bias `[F, P, caption_len]`.
    fn frame_bias<T: Real>(
        &self,
        spec: &ModulationSpec,
        t: usize,
        caption_len: usize,
        amplify: bool,
    ) -> Result<Tensor<T>> {
        let cfg = &self.config;
        let (gh, gw) = cfg.grid();
        let mut data = Vec::with_capacity(cfg.frames * gh * gw * caption_len);
        for k in 0..cfg.frames {
            let b = modulation_bias::<T>(spec, k, t, T_MAX, gh, gw, caption_len, amplify)?;
            data.extend_from_slice(b.data());
        }
        Tensor::new(&[cfg.frames, gh * gw, caption_len], data)
    }

    /// Predicted noise in clip layout `[F, C, H, W]`.
    pub fn predict_eps<T: Real>(
        &self,
        store: &ParamStore<T>,
        x_t: &Tensor<T>,
        t: usize,
        cond: &Conditioning<'_>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, x_t, t, cond)?;
        unpatchify(tape.value(out.eps), self.config.clip_shape(), self.config.patch)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::camgen::sample_camera_params;

    pub(crate) fn tiny_config() -> DenoiserConfig {
        DenoiserConfig {
            frames: 3,
            channels: 2,
            height: 4,
            width: 4,
            patch: 2,
            dim: 8,
            heads: 2,
            blocks: 2,
            ffn_mult: 2,
            camera_freqs: 2,
            init_seed: 0,
        }
    }

    #[test]
    fn patchify_round_trips() {
        let x = Tensor::<f64>::new(&[2, 3, 4, 8], (0..192).map(f64::from).collect()).unwrap();
        let p = patchify(&x, 2).unwrap();
        assert_eq!(p.shape(), &[2, 8, 12]);
        // token 1 of frame 0 starts at pixel (0, 2) of channel 0
        assert_eq!(&p.data()[12..14], &[2.0, 3.0]);
        assert_eq!(unpatchify(&p, [2, 3, 4, 8], 2).unwrap(), x);
    }

    #[test]
    fn fresh_camera_modules_are_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let model = DenoiserModel::init(tiny_config(), &mut store, &mut rng).unwrap();
        let caption = [0, 6, 4, 2, 1];
        for _ in 0..5 {
            let x = Tensor::new(
                &model.config.clip_shape(),
                (0..96).map(|_| StandardNormal.sample(&mut rng)).collect(),
            )
            .unwrap();
            let t = rng.gen_range(1..=T_MAX);
            let base = Conditioning {
                caption: &caption,
                camera: None,
                modulation: None,
            };
            let with_cam = Conditioning {
                camera: Some(sample_camera_params(&mut rng)),
                ..base
            };
            let a = model.predict_eps(&store, &x, t, &base).unwrap();
            let b = model.predict_eps(&store, &x, t, &with_cam).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let model = DenoiserModel::init(tiny_config(), &mut store, &mut rng).unwrap();
        let cond = Conditioning {
            caption: &[0, 1],
            camera: None,
            modulation: None,
        };
        assert!(model.predict_eps(&store, &Tensor::zeros(&[3, 2, 4, 2]), 10, &cond).is_err());
    }
}
