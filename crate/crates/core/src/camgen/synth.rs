//! Procedural moving-shapes clips shot by a stationary camera.
//!
//! The background is a muted multi-octave value-noise texture that never
//! changes between frames; each object is a solid, saturated shape moving
//! along a straight path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caption::{Caption, ColorKey, ShapeKind, TokenId};
use crate::geometry::BBox;
use crate::video::VideoClip;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    pub color: ColorKey,
    /// Normalized centre at the first frame.
    pub start: (f64, f64),
    /// Normalized centre at the last frame.
    pub end: (f64, f64),
    /// Side length (square, triangle) or diameter (circle), normalized.
    pub size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClipSpec {
    pub background_seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Knobs for drawing random clip specs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Upper bound on the path length, normalized.
    pub max_travel: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 64,
            width: 64,
            min_objects: 1,
            max_objects: 1,
            min_size: 0.3,
            max_size: 0.45,
            max_travel: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub clip: VideoClip,
    pub caption: Caption,
    /// Caption positions of each object's words (colour, shape).
    pub object_tokens: Vec<Vec<usize>>,
    pub colors: Vec<ColorKey>,
    /// Tight per-frame boxes, `[object][frame]`.
    pub boxes: Vec<Vec<BBox>>,
}

impl SyntheticClipSpec {
    /// Draws a valid spec: distinct colours, paths that keep every shape
    /// fully inside the frame.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &SynthConfig) -> Self {
        let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let mut colors = ColorKey::ALL.to_vec();
        let mut objects = Vec::with_capacity(n);
        for _ in 0..n {
            let color = colors.remove(rng.gen_range(0..colors.len()));
            let shape = ShapeKind::ALL[rng.gen_range(0..ShapeKind::ALL.len())];
            let size = rng.gen_range(cfg.min_size..=cfg.max_size);
            let lo = size / 2.0;
            let hi = 1.0 - size / 2.0;
            let start = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = rng.gen_range(0.0..=cfg.max_travel);
            let end = (
                (start.0 + len * angle.cos()).clamp(lo, hi),
                (start.1 + len * angle.sin()).clamp(lo, hi),
            );
            objects.push(ObjectSpec {
                shape,
                color,
                start,
                end,
                size,
            });
        }
        Self {
            background_seed: rng.gen(),
            objects,
            frames: cfg.frames,
            height: cfg.height,
            width: cfg.width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 || self.height < 4 || self.width < 4 {
            return Err(Error::invalid(format!(
                "clip must be at least 2 frames of 4×4, got {}×{}×{}",
                self.frames, self.height, self.width
            )));
        }
        for (i, a) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|b| b.color == a.color) {
                return Err(Error::invalid(format!(
                    "two objects share the colour {}",
                    a.color.word()
                )));
            }
            let r = a.size / 2.0;
            let inside = |(x, y): (f64, f64)| x - r >= 0.0 && x + r <= 1.0 && y - r >= 0.0 && y + r <= 1.0;
            if !(a.size > 0.0 && inside(a.start) && inside(a.end)) {
                return Err(Error::invalid(format!(
                    "object {i} ({} {}) leaves the frame",
                    a.color.word(),
                    a.shape.word()
                )));
            }
        }
        Ok(())
    }
}

/// Smooth value noise: bilinear interpolation of a random `cells × cells`
/// lattice.
fn value_noise(rng: &mut ChaCha8Rng, cells: usize, h: usize, w: usize) -> Vec<f64> {
    let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen()).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let gy = (y as f64 + 0.5) / h as f64 * cells as f64;
        let (y0, fy) = (gy.floor() as usize, gy.fract());
        for x in 0..w {
            let gx = (x as f64 + 0.5) / w as f64 * cells as f64;
            let (x0, fx) = (gx.floor() as usize, gx.fract());
            let at = |yy: usize, xx: usize| lattice[yy.min(cells) * (cells + 1) + xx.min(cells)];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

fn render_background(seed: u64, h: usize, w: usize) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves = [(4, 1.0), (8, 0.6), (16, 0.35)];
    let mut lum = vec![0.0; h * w];
    let mut total = 0.0;
    for (cells, amp) in octaves {
        let n = value_noise(&mut rng, cells, h, w);
        lum.iter_mut().zip(&n).for_each(|(l, v)| *l += amp * v);
        total += amp;
    }
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.06..0.06));
    lum.iter()
        .map(|l| {
            let g = 0.15 + 0.7 * l / total;
            std::array::from_fn(|c| (g + tint[c]).clamp(0.0, 1.0) as f32)
        })
        .collect()
}

fn inside_shape(shape: ShapeKind, dx: f64, dy: f64, size: f64) -> bool {
    let r = size / 2.0;
    match shape {
        ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        // apex up, base at the bottom of the bounding square
        ShapeKind::Triangle => {
            let t = (dy + r) / (2.0 * r);
            (0.0..=1.0).contains(&t) && dx.abs() <= r * t
        }
    }
}

/// Renders the clip, its caption and tight per-frame object boxes.
pub fn gen_synthetic_clip(spec: &SyntheticClipSpec) -> Result<SyntheticClip> {
    spec.validate()?;
    let (f, h, w) = (spec.frames, spec.height, spec.width);
    let bg = render_background(spec.background_seed, h, w);
    let mut clip = VideoClip::zeros(f, 3, h, w);
    for k in 0..f {
        for (i, px) in bg.iter().enumerate() {
            for (c, &v) in px.iter().enumerate() {
                clip.set(k, c, i / w, i % w, v);
            }
        }
    }
    let mut boxes = Vec::with_capacity(spec.objects.len());
    for obj in &spec.objects {
        let rgb = obj.color.rgb();
        let mut track = Vec::with_capacity(f);
        for k in 0..f {
            let s = k as f64 / (f - 1) as f64;
            let cx = obj.start.0 + (obj.end.0 - obj.start.0) * s;
            let cy = obj.start.1 + (obj.end.1 - obj.start.1) * s;
            let (mut x_lo, mut y_lo, mut x_hi, mut y_hi) = (w, h, 0, 0);
            for y in 0..h {
                let dy = (y as f64 + 0.5) / h as f64 - cy;
                for x in 0..w {
                    let dx = (x as f64 + 0.5) / w as f64 - cx;
                    if inside_shape(obj.shape, dx, dy, obj.size) {
                        for (c, &v) in rgb.iter().enumerate() {
                            clip.set(k, c, y, x, v);
                        }
                        x_lo = x_lo.min(x);
                        y_lo = y_lo.min(y);
                        x_hi = x_hi.max(x + 1);
                        y_hi = y_hi.max(y + 1);
                    }
                }
            }
            if x_hi <= x_lo || y_hi <= y_lo {
                return Err(Error::invalid(format!(
                    "{} {} covers no pixel at frame {k}",
                    obj.color.word(),
                    obj.shape.word()
                )));
            }
            track.push(BBox::new(
                x_lo as f64 / w as f64,
                y_lo as f64 / h as f64,
                x_hi as f64 / w as f64,
                y_hi as f64 / h as f64,
            ));
        }
        boxes.push(track);
    }
    let mut inner = Vec::new();
    let mut object_tokens = Vec::new();
    for obj in &spec.objects {
        // +1 for the leading <sos>
        object_tokens.push(vec![inner.len() + 1, inner.len() + 2]);
        inner.push(TokenId::from(obj.color));
        inner.push(TokenId::from(obj.shape));
    }
    inner.push(TokenId::BACKGROUND);
    Ok(SyntheticClip {
        clip,
        caption: Caption::from_inner(&inner)?,
        object_tokens,
        colors: spec.objects.iter().map(|o| o.color).collect(),
        boxes,
    })
}
