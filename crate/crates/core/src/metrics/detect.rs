use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::caption::ColorKey;
use crate::geometry::BBox;
use crate::video::VideoClip;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Euclidean RGB distance from the key colour that still counts.
    pub radius: f64,
    /// Smallest component, as a fraction of the frame area.
    pub min_fraction: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            radius: 0.35,
            min_fraction: 1.0 / 64.0,
        }
    }
}

/// Per-frame, per-colour detections, `boxes[frame][key]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub keys: Vec<ColorKey>,
    pub boxes: Vec<Vec<Option<BBox>>>,
}

impl DetectionSet {
    pub fn track(&self, key: ColorKey) -> Option<Vec<Option<BBox>>> {
        let i = self.keys.iter().position(|&k| k == key)?;
        Some(self.boxes.iter().map(|f| f[i]).collect())
    }
}

/// Thresholds every frame around each key colour, keeps the largest
/// 4-connected component and returns its tight normalized box.
pub fn detect_boxes(clip: &VideoClip, keys: &[ColorKey], cfg: &DetectorConfig) -> Result<DetectionSet> {
    for (i, k) in keys.iter().enumerate() {
        if keys[..i].contains(k) {
            return Err(Error::invalid(format!("colour key {} listed twice", k.word())));
        }
    }
    if clip.channels != 3 {
        return Err(Error::invalid(format!(
            "colour detection needs 3 channels, clip has {}",
            clip.channels
        )));
    }
    let (h, w) = (clip.height, clip.width);
    let min_pixels = ((cfg.min_fraction * (h * w) as f64).ceil() as usize).max(1);
    let r2 = cfg.radius * cfg.radius;
    let mut boxes = Vec::with_capacity(clip.frames);
    for f in 0..clip.frames {
        let frame = clip.frame(f);
        let mut per_key = Vec::with_capacity(keys.len());
        for key in keys {
            let rgb = key.rgb();
            let mask: Vec<bool> = (0..h * w)
                .map(|i| {
                    (0..3)
                        .map(|c| (frame[c * h * w + i] - rgb[c]) as f64)
                        .map(|d| d * d)
                        .sum::<f64>()
                        <= r2
                })
                .collect();
            per_key.push(largest_component(&mask, h, w, min_pixels));
        }
        boxes.push(per_key);
    }
    Ok(DetectionSet {
        keys: keys.to_vec(),
        boxes,
    })
}

fn largest_component(mask: &[bool], h: usize, w: usize, min_pixels: usize) -> Option<BBox> {
    let mut seen = vec![false; h * w];
    let mut best: Option<(usize, [usize; 4])> = None;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut count = 0;
        let mut ext = [w, h, 0, 0];
        while let Some(i) = queue.pop_front() {
            count += 1;
            let (y, x) = (i / w, i % w);
            ext = [ext[0].min(x), ext[1].min(y), ext[2].max(x + 1), ext[3].max(y + 1)];
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, ext));
        }
    }
    let (count, [x1, y1, x2, y2]) = best?;
    (count >= min_pixels).then(|| {
        BBox::new(
            x1 as f64 / w as f64,
            y1 as f64 / h as f64,
            x2 as f64 / w as f64,
            y2 as f64 / h as f64,
        )
    })
}

/// Grounding scores over all `(frame, object)` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub miou: f64,
    /// Percentage of pairs with IoU ≥ 0.5.
    pub ap50: f64,
    pub pairs: usize,
}

/// mIoU (missing detections count 0) and AP50 against per-frame target
/// boxes for each colour key.
pub fn miou_ap50(detections: &DetectionSet, targets: &[(ColorKey, Vec<BBox>)]) -> Result<GroundingScore> {
    let mut target_keys: Vec<ColorKey> = targets.iter().map(|(k, _)| *k).collect();
    let mut det_keys = detections.keys.clone();
    target_keys.sort();
    det_keys.sort();
    if target_keys != det_keys {
        return Err(Error::invalid(format!(
            "detection keys {:?} do not match target keys {:?}",
            detections.keys,
            targets.iter().map(|(k, _)| *k).collect::<Vec<_>>()
        )));
    }
    let mut ious = Vec::new();
    for (key, boxes) in targets {
        let track = detections.track(*key).expect("keys checked above");
        if track.len() != boxes.len() {
            return Err(Error::invalid(format!(
                "{} has {} target frames but {} detected frames",
                key.word(),
                boxes.len(),
                track.len()
            )));
        }
        for (d, t) in track.iter().zip(boxes) {
            ious.push(d.map_or(0.0, |d| d.iou(t)));
        }
    }
    if ious.is_empty() {
        return Err(Error::invalid("no (frame, object) pairs to score"));
    }
    let n = ious.len() as f64;
    Ok(GroundingScore {
        miou: ious.iter().sum::<f64>() / n,
        ap50: 100.0 * ious.iter().filter(|&&v| v >= 0.5).count() as f64 / n,
        pairs: ious.len(),
    })
}
