use std::path::Path;

use crate::camgen::{compute_crop_boxes, CameraParams};
use crate::video::VideoClip;
use crate::{Error, Result};

pub const FLOW_MAGIC: &[u8; 8] = b"DAVFLO01";

/// Dense per-frame-pair displacement in output pixels, `(dx, dy)`
/// interleaved, indexed `[pair][y][x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub pairs: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FlowField {
    pub fn zeros(pairs: usize, height: usize, width: usize) -> Self {
        Self {
            pairs,
            height,
            width,
            data: vec![0.0; pairs * height * width * 2],
        }
    }

    fn offset(&self, k: usize, y: usize, x: usize) -> usize {
        ((k * self.height + y) * self.width + x) * 2
    }

    pub fn get(&self, k: usize, y: usize, x: usize) -> (f32, f32) {
        let o = self.offset(k, y, x);
        (self.data[o], self.data[o + 1])
    }

    pub fn set(&mut self, k: usize, y: usize, x: usize, v: (f32, f32)) {
        let o = self.offset(k, y, x);
        self.data[o] = v.0;
        self.data[o + 1] = v.1;
    }

    /// Mean `(dx, dy)` over all pixels and pairs.
    pub fn mean(&self) -> (f64, f64) {
        let n = (self.data.len() / 2) as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        for v in self.data.chunks_exact(2) {
            sx += v[0] as f64;
            sy += v[1] as f64;
        }
        (sx / n, sy / n)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len());
        out.extend_from_slice(FLOW_MAGIC);
        for d in [self.pairs, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 20 || &bytes[..8] != FLOW_MAGIC {
            return Err(bad("missing DAVFLO01 header".into()));
        }
        let dim = |i: usize| {
            let o = 8 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        };
        let (pairs, height, width) = (dim(0), dim(1), dim(2));
        let n = pairs
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| bad("dimension overflow".into()))?;
        if bytes.len() != 20 + 4 * n {
            return Err(bad(format!(
                "dims ({pairs},{height},{width}) need {} bytes, file has {}",
                20 + 4 * n,
                bytes.len()
            )));
        }
        let data = bytes[20..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self {
            pairs,
            height,
            width,
            data,
        })
    }
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    std::fs::write(path, flow.to_bytes())?;
    Ok(())
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    FlowField::from_bytes(&std::fs::read(path)?, path)
}

/// Flow implied by the crop windows that camera augmentation applies.
///
/// Pixel centre `x̂` of frame k samples source point `W_k.tl + x̂ ⊙ W_k.size`,
/// which appears in frame k+1 at `(s − W_{k+1}.tl) ⊘ W_{k+1}.size`.
pub fn gt_flow_from_camera(params: &CameraParams, frames: usize, h: usize, w: usize) -> Result<FlowField> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("flow field needs a positive size"));
    }
    let boxes = compute_crop_boxes(params, frames)?.normalized;
    if let Some(k) = boxes.iter().position(|b| !(b.width() > 0.0 && b.height() > 0.0)) {
        return Err(Error::DegenerateWindow {
            frame: k,
            detail: format!("{:?}", boxes[k]),
        });
    }
    let mut flow = FlowField::zeros(frames - 1, h, w);
    for k in 0..frames - 1 {
        let (a, b) = (boxes[k], boxes[k + 1]);
        for y in 0..h {
            let yh = (y as f64 + 0.5) / h as f64;
            let sy = a.y1 + yh * a.height();
            let dy = ((sy - b.y1) / b.height() - yh) * h as f64;
            for x in 0..w {
                let xh = (x as f64 + 0.5) / w as f64;
                let sx = a.x1 + xh * a.width();
                let dx = ((sx - b.x1) / b.width() - xh) * w as f64;
                flow.set(k, y, x, (dx as f32, dy as f32));
            }
        }
    }
    Ok(flow)
}

/// Block-matching output plus per-block confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowEstimate {
    pub flow: FlowField,
    /// `[pair][block]` flags for textureless blocks whose flow was set to 0.
    pub low_confidence: Vec<Vec<bool>>,
}

impl FlowEstimate {
    pub fn all_low_confidence(&self) -> bool {
        self.low_confidence.iter().flatten().all(|&c| c)
    }
}

/// Blocks whose luma variance is below this are treated as textureless.
const FLAT_VARIANCE: f64 = 1e-6;

/// Integer block matching on channel-mean luma (mean squared difference
/// over the in-frame part of the displaced block, search radius `search`)
/// refined to sub-pixel precision by
/// a parabola through the neighbouring costs. Each block's flow is
/// broadcast to its pixels; edge pixels not covered by a whole block take
/// the nearest block's value.
pub fn estimate_flow(clip: &VideoClip, block: usize, search: usize) -> Result<FlowEstimate> {
    let (f, h, w) = (clip.frames, clip.height, clip.width);
    if f < 2 {
        return Err(Error::invalid(format!("flow needs at least 2 frames, got {f}")));
    }
    if block == 0 || block > h || block > w || search >= w.min(h) {
        return Err(Error::invalid(format!(
            "block {block} / search {search} do not fit a {h}×{w} frame"
        )));
    }
    let (bh, bw) = (h / block, w / block);
    let lumas: Vec<Vec<f64>> = (0..f).map(|k| clip.luma(k)).collect();
    let r = search as isize;
    let mut flow = FlowField::zeros(f - 1, h, w);
    let mut low_confidence = Vec::with_capacity(f - 1);
    for k in 0..f - 1 {
        let (cur, next) = (&lumas[k], &lumas[k + 1]);
        let mut block_flow = vec![(0.0f64, 0.0f64); bh * bw];
        let mut flags = vec![false; bh * bw];
        for by in 0..bh {
            for bx in 0..bw {
                let (x0, y0) = ((bx * block) as isize, (by * block) as isize);
                let pixels = || {
                    (0..block as isize).flat_map(move |j| (0..block as isize).map(move |i| (i, j)))
                };
                let n = (block * block) as f64;
                let mean = pixels()
                    .map(|(i, j)| cur[((y0 + j) as usize) * w + (x0 + i) as usize])
                    .sum::<f64>()
                    / n;
                let var = pixels()
                    .map(|(i, j)| (cur[((y0 + j) as usize) * w + (x0 + i) as usize] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                if var < FLAT_VARIANCE {
                    flags[by * bw + bx] = true;
                    continue;
                }
                // mean squared difference over the part of the displaced
                // block that stays inside the frame (at least half of it)
                let cost = |dx: isize, dy: isize| -> Option<f64> {
                    let (mut sum, mut count) = (0.0, 0usize);
                    for (i, j) in pixels() {
                        let (nx, ny) = (x0 + i + dx, y0 + j + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let a = cur[((y0 + j) as usize) * w + (x0 + i) as usize];
                        let b = next[(ny as usize) * w + nx as usize];
                        sum += (a - b) * (a - b);
                        count += 1;
                    }
                    (2 * count >= block * block).then(|| sum / count as f64)
                };
                // zero displacement first so exact ties keep the smaller motion
                let mut best = (0isize, 0isize, cost(0, 0).unwrap_or(f64::INFINITY));
                for dy in -r..=r {
                    for dx in -r..=r {
                        if let Some(c) = cost(dx, dy) {
                            let closer = dx.abs() + dy.abs() < best.0.abs() + best.1.abs();
                            if c < best.2 || (c == best.2 && closer) {
                                best = (dx, dy, c);
                            }
                        }
                    }
                }
                let (dx, dy, c0) = best;
                let refine = |lo: Option<f64>, hi: Option<f64>| -> f64 {
                    match (lo, hi) {
                        // an exact match needs no sub-pixel correction
                        _ if c0 <= 1e-12 => 0.0,
                        (Some(a), Some(b)) => {
                            let denom = a - 2.0 * c0 + b;
                            if denom > 0.0 {
                                ((a - b) / (2.0 * denom)).clamp(-0.5, 0.5)
                            } else {
                                0.0
                            }
                        }
                        _ => 0.0,
                    }
                };
                let sx = refine(cost(dx - 1, dy), cost(dx + 1, dy));
                let sy = refine(cost(dx, dy - 1), cost(dx, dy + 1));
                block_flow[by * bw + bx] = (dx as f64 + sx, dy as f64 + sy);
            }
        }
        for y in 0..h {
            let by = (y / block).min(bh - 1);
            for x in 0..w {
                let bx = (x / block).min(bw - 1);
                let (dx, dy) = block_flow[by * bw + bx];
                flow.set(k, y, x, (dx as f32, dy as f32));
            }
        }
        low_confidence.push(flags);
    }
    Ok(FlowEstimate {
        flow,
        low_confidence,
    })
}

/// Mean endpoint error over all pixels and pairs, divided by the frame
/// width.
pub fn flow_error(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    if (pred.pairs, pred.height, pred.width) != (gt.pairs, gt.height, gt.width) {
        return Err(Error::shape(
            "flow_error",
            format!(
                "({}, {}, {}) vs ({}, {}, {})",
                pred.pairs, pred.height, pred.width, gt.pairs, gt.height, gt.width
            ),
        ));
    }
    let n = (pred.data.len() / 2) as f64;
    let total: f64 = pred
        .data
        .chunks_exact(2)
        .zip(gt.data.chunks_exact(2))
        .map(|(a, b)| ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64))
        .sum();
    Ok(total / n / pred.width as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f64, y: f64) -> f32 {
        (0.5 + 0.2 * (0.9 * x).sin() + 0.2 * (0.7 * y + 0.3 * x).cos() + 0.1 * (1.7 * x * 0.5 + y).sin()) as f32
    }

    fn translating(f: usize, h: usize, w: usize, vx: f64, vy: f64) -> VideoClip {
        let mut clip = VideoClip::zeros(f, 1, h, w);
        for k in 0..f {
            for y in 0..h {
                for x in 0..w {
                    let v = texture(x as f64 - vx * k as f64, y as f64 - vy * k as f64);
                    clip.set(k, 0, y, x, v);
                }
            }
        }
        clip
    }

    #[test]
    fn static_camera_has_zero_flow() {
        let f = gt_flow_from_camera(&CameraParams::STATIC, 8, 16, 16).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_pan_is_constant() {
        let p = CameraParams::new(0.5, 0.0, 1.0).unwrap();
        let f = gt_flow_from_camera(&p, 8, 16, 16).unwrap();
        let expect = -0.5 * 16.0 / 7.0;
        for v in f.data.chunks_exact(2) {
            assert!((v[0] as f64 - expect).abs() < 1e-5 && v[1] == 0.0);
        }
    }

    #[test]
    fn zoom_is_radial_and_antisymmetric() {
        let p = CameraParams::new(0.0, 0.0, 2.0).unwrap();
        let f = gt_flow_from_camera(&p, 4, 16, 16).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let (a, b) = (f.get(1, y, x), f.get(1, 15 - y, 15 - x));
                assert!((a.0 + b.0).abs() < 1e-5 && (a.1 + b.1).abs() < 1e-5);
            }
        }
        // points right of centre move right
        assert!(f.get(0, 8, 15).0 > 0.0 && f.get(0, 8, 0).0 < 0.0);
    }

    #[test]
    fn block_matching_recovers_translation() {
        let clip = translating(4, 32, 32, 3.0, 0.0);
        let est = estimate_flow(&clip, 4, 8).unwrap();
        // interior blocks only: edge blocks can lose their match
        for k in 0..3 {
            for y in 4..28 {
                for x in 4..24 {
                    let (dx, dy) = est.flow.get(k, y, x);
                    assert!((dx - 3.0).abs() <= 0.5 && dy.abs() <= 0.5, "{dx},{dy} at {x},{y}");
                }
            }
        }
        let still = translating(3, 16, 16, 0.0, 0.0);
        assert!(estimate_flow(&still, 4, 4).unwrap().flow.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_clip_is_low_confidence_zero() {
        let mut clip = VideoClip::zeros(3, 3, 16, 16);
        clip.data.iter_mut().for_each(|v| *v = 0.4);
        let est = estimate_flow(&clip, 4, 4).unwrap();
        assert!(est.all_low_confidence());
        assert!(est.flow.data.iter().all(|&v| v == 0.0));
        assert!(estimate_flow(&VideoClip::zeros(1, 1, 8, 8), 4, 2).is_err());
    }

    #[test]
    fn flow_error_arithmetic_and_io() {
        let gt = gt_flow_from_camera(&CameraParams::new(0.3, -0.2, 1.2).unwrap(), 5, 16, 16).unwrap();
        assert_eq!(flow_error(&gt, &gt).unwrap(), 0.0);
        let mut shifted = gt.clone();
        shifted.data.chunks_exact_mut(2).for_each(|v| v[0] += 1.0);
        assert!((flow_error(&shifted, &gt).unwrap() - 0.0625).abs() < 1e-6);
        assert!(flow_error(&FlowField::zeros(3, 16, 16), &gt).is_err());
        let back = FlowField::from_bytes(&gt.to_bytes(), Path::new("m")).unwrap();
        assert_eq!(back, gt);
        assert!(FlowField::from_bytes(&gt.to_bytes()[..30], Path::new("m")).is_err());
    }
}
