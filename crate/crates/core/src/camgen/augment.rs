//! Simulated camera motion by sliding a crop window over a stationary clip.
//!
//! Crop corners are interpolated linearly from the full frame to the
//! pan/zoom-shifted last box, then rescaled by the global extent of all
//! corners so every window lies inside the source. Windows keep fractional
//! coordinates and are resampled bilinearly with half-pixel centres.

use super::CameraParams;
use crate::geometry::BBox;
use crate::video::VideoClip;
use crate::{Error, Result};

/// Crop windows for every frame, before and after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct CropBoxSequence {
    /// Interpolated boxes relative to the first frame (may leave `[0, 1]`).
    pub raw: Vec<BBox>,
    /// Boxes rescaled into `[0, 1]` by the global corner extent.
    pub normalized: Vec<BBox>,
}

impl CropBoxSequence {
    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }
}

/// `linspace(a, b, n)[i]` with the endpoint hit exactly.
fn linspace_at(a: f64, b: f64, i: usize, n: usize) -> f64 {
    if i + 1 == n {
        b
    } else {
        a + (b - a) * (i as f64 / (n - 1) as f64)
    }
}

pub fn compute_crop_boxes(params: &CameraParams, frames: usize) -> Result<CropBoxSequence> {
    if frames < 2 {
        return Err(Error::invalid(format!(
            "camera augmentation needs at least 2 frames, got {frames}"
        )));
    }
    params.validate()?;
    let CameraParams { cx, cy, cz } = *params;
    let half = 0.5 / cz;
    let end = BBox::new(cx + 0.5 - half, cy + 0.5 - half, cx + 0.5 + half, cy + 0.5 + half);
    let raw: Vec<BBox> = (0..frames)
        .map(|i| {
            BBox::new(
                linspace_at(0.0, end.x1, i, frames),
                linspace_at(0.0, end.y1, i, frames),
                linspace_at(1.0, end.x2, i, frames),
                linspace_at(1.0, end.y2, i, frames),
            )
        })
        .collect();
    let normalized = normalize_boxes(&raw);
    Ok(CropBoxSequence { raw, normalized })
}

/// Rescales x and y corner coordinates by their global min/max over all
/// frames.
pub fn normalize_boxes(boxes: &[BBox]) -> Vec<BBox> {
    let xs = boxes.iter().flat_map(|b| [b.x1, b.x2]);
    let ys = boxes.iter().flat_map(|b| [b.y1, b.y2]);
    let (min_x, max_x) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (min_y, max_y) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (sx, sy) = (max_x - min_x, max_y - min_y);
    boxes
        .iter()
        .map(|b| {
            BBox::new(
                (b.x1 - min_x) / sx,
                (b.y1 - min_y) / sy,
                (b.x2 - min_x) / sx,
                (b.y2 - min_y) / sy,
            )
        })
        .collect()
}

/// Bilinearly resamples the source window `[x1, x2) × [y1, y2)` (source
/// pixel units) of one `[channels, sh, sw]` frame into `[channels, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn sample_window(
    src: &[f32],
    channels: usize,
    sh: usize,
    sw: usize,
    window: BBox,
    h: usize,
    w: usize,
    out: &mut [f32],
) {
    let sx = (window.x2 - window.x1) / w as f64;
    let sy = (window.y2 - window.y1) / h as f64;
    let coord = |origin: f64, step: f64, i: usize, n: usize| {
        let s = (origin + (i as f64 + 0.5) * step - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..w).map(|u| coord(window.x1, sx, u, sw)).collect();
    for v in 0..h {
        let (y0, y1, fy) = coord(window.y1, sy, v, sh);
        for c in 0..channels {
            let plane = &src[c * sh * sw..(c + 1) * sh * sw];
            let r0 = &plane[y0 * sw..(y0 + 1) * sw];
            let r1 = &plane[y1 * sw..(y1 + 1) * sw];
            let orow = &mut out[(c * h + v) * w..(c * h + v + 1) * w];
            for (o, &(x0, x1, fx)) in orow.iter_mut().zip(&cols) {
                let top = r0[x0] as f64 * (1.0 - fx) + r0[x1] as f64 * fx;
                let bot = r1[x0] as f64 * (1.0 - fx) + r1[x1] as f64 * fx;
                *o = (top * (1.0 - fy) + bot * fy) as f32;
            }
        }
    }
}

/// Plain bilinear resize of every frame.
pub fn resize_bilinear(src: &VideoClip, h: usize, w: usize) -> VideoClip {
    let mut out = VideoClip::zeros(src.frames, src.channels, h, w);
    let full = BBox::new(0.0, 0.0, src.width as f64, src.height as f64);
    for f in 0..src.frames {
        sample_window(
            src.frame(f),
            src.channels,
            src.height,
            src.width,
            full,
            h,
            w,
            out.frame_mut(f),
        );
    }
    out
}

/// Simulates the camera movement `params` on a stationary-camera clip and
/// resamples every frame to `h × w`.
pub fn aug_with_cam_motion(
    src: &VideoClip,
    params: &CameraParams,
    h: usize,
    w: usize,
) -> Result<VideoClip> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    let boxes = compute_crop_boxes(params, src.frames)?;
    let (sw, sh) = (src.width as f64, src.height as f64);
    let mut out = VideoClip::zeros(src.frames, src.channels, h, w);
    for (f, b) in boxes.normalized.iter().enumerate() {
        let window = BBox::new(b.x1 * sw, b.y1 * sh, b.x2 * sw, b.y2 * sh);
        if window.width() < 2.0 || window.height() < 2.0 {
            return Err(Error::DegenerateWindow {
                frame: f,
                detail: format!(
                    "window {:.3}×{:.3} source pixels is smaller than 2×2",
                    window.width(),
                    window.height()
                ),
            });
        }
        sample_window(
            src.frame(f),
            src.channels,
            src.height,
            src.width,
            window,
            h,
            w,
            out.frame_mut(f),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn identity_camera_is_full_frame() {
        let seq = compute_crop_boxes(&CameraParams::STATIC, 8).unwrap();
        assert!(seq.normalized.iter().all(|b| *b == BBox::FULL));
    }

    #[test]
    fn half_pan_two_frames() {
        let p = CameraParams::new(0.5, 0.0, 1.0).unwrap();
        let seq = compute_crop_boxes(&p, 2).unwrap();
        let (a, b) = (seq.normalized[0], seq.normalized[1]);
        assert!(close(a.x1, 0.0) && close(a.x2, 2.0 / 3.0));
        assert!(close(b.x1, 1.0 / 3.0) && close(b.x2, 1.0));
        assert!(close(a.y1, 0.0) && close(a.y2, 1.0) && close(b.y1, 0.0) && close(b.y2, 1.0));
    }

    #[test]
    fn zoom_in_crops_center_half() {
        let p = CameraParams::new(0.0, 0.0, 2.0).unwrap();
        let seq = compute_crop_boxes(&p, 2).unwrap();
        assert_eq!(seq.normalized[0], BBox::FULL);
        assert_eq!(seq.normalized[1], BBox::new(0.25, 0.25, 0.75, 0.75));
    }

    #[test]
    fn raw_boxes_realize_commanded_motion() {
        let p = CameraParams::new(-0.3, 0.7, 0.8).unwrap();
        let seq = compute_crop_boxes(&p, 5).unwrap();
        let (first, last) = (seq.raw[0], seq.raw[4]);
        let (c0, c1) = (first.center(), last.center());
        assert!(close(c1.0 - c0.0, p.cx) && close(c1.1 - c0.1, p.cy));
        assert!(close(first.width() / last.width(), p.cz));
        assert!(seq.normalized.iter().all(BBox::is_valid));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(compute_crop_boxes(&CameraParams::STATIC, 1).is_err());
        let bad = CameraParams {
            cx: 1.2,
            cy: 0.0,
            cz: 1.0,
        };
        assert!(compute_crop_boxes(&bad, 4).is_err());
        let tiny = VideoClip::zeros(2, 1, 3, 3);
        let p = CameraParams::new(1.0, 1.0, 2.0).unwrap();
        match aug_with_cam_motion(&tiny, &p, 4, 4) {
            Err(Error::DegenerateWindow { frame, .. }) => assert!(frame < 2),
            other => panic!("expected degenerate window, got {other:?}"),
        }
    }
}
