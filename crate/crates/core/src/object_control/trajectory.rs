use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::{Error, Result};

const ENDPOINT_TOL: f64 = 1e-6;

/// Per-frame boxes for one object, bound to the caption positions of its
/// words.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxTrajectory {
    pub token_positions: Vec<usize>,
    pub boxes: Vec<BBox>,
}

impl BoxTrajectory {
    pub fn frames(&self) -> usize {
        self.boxes.len()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Interpolates `frames` boxes between `start` and `end`.
///
/// Box centres are placed along `track` at equal arc-length steps; widths
/// and heights interpolate linearly. The track must begin at the start
/// centre and finish at the end centre; a single point is accepted only
/// when both centres coincide with it.
pub fn build_box_trajectory(
    token_positions: Vec<usize>,
    start: BBox,
    end: BBox,
    track: &[(f64, f64)],
    frames: usize,
) -> Result<BoxTrajectory> {
    if frames < 2 {
        return Err(Error::invalid(format!(
            "a box trajectory needs at least 2 frames, got {frames}"
        )));
    }
    if token_positions.is_empty() {
        return Err(Error::invalid("a box trajectory must bind at least one token"));
    }
    for (name, b) in [("start", start), ("end", end)] {
        if !b.is_valid() {
            return Err(Error::invalid(format!("{name} box {b:?} is not a valid normalized box")));
        }
    }
    let (Some(&first), Some(&last)) = (track.first(), track.last()) else {
        return Err(Error::invalid("track has no points"));
    };
    if track.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(Error::invalid("track has non-finite points"));
    }
    if dist(first, start.center()) > ENDPOINT_TOL || dist(last, end.center()) > ENDPOINT_TOL {
        return Err(Error::invalid(format!(
            "track runs {first:?} → {last:?} but box centres are {:?} → {:?}",
            start.center(),
            end.center()
        )));
    }
    let mut cumulative = Vec::with_capacity(track.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for pair in track.windows(2) {
        total += dist(pair[0], pair[1]);
        cumulative.push(total);
    }
    if total == 0.0 && dist(start.center(), end.center()) > 0.0 {
        return Err(Error::invalid(
            "zero-length track cannot join different start and end centres",
        ));
    }

    let point_at = |s: f64| -> (f64, f64) {
        if total == 0.0 {
            return first;
        }
        let seg = cumulative
            .windows(2)
            .position(|c| s <= c[1])
            .unwrap_or(track.len() - 2);
        let (a, b) = (track[seg], track[seg + 1]);
        let len = cumulative[seg + 1] - cumulative[seg];
        let u = if len > 0.0 { (s - cumulative[seg]) / len } else { 0.0 };
        (a.0 + (b.0 - a.0) * u, a.1 + (b.1 - a.1) * u)
    };

    let boxes = (0..frames)
        .map(|k| {
            if k == 0 {
                return start;
            }
            if k + 1 == frames {
                return end;
            }
            let frac = k as f64 / (frames - 1) as f64;
            let c = point_at(total * frac);
            let w = start.width() + (end.width() - start.width()) * frac;
            let h = start.height() + (end.height() - start.height()) * frac;
            BBox::from_center(c.0, c.1, w, h).clamp_unit()
        })
        .collect::<Vec<_>>();
    if let Some(k) = boxes.iter().position(|b| !b.is_valid()) {
        return Err(Error::invalid(format!(
            "frame {k} box {:?} is degenerate after clamping",
            boxes[k]
        )));
    }
    Ok(BoxTrajectory {
        token_positions,
        boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_box_single_point() {
        let b = BBox::new(0.2, 0.3, 0.6, 0.5);
        let t = build_box_trajectory(vec![1], b, b, &[b.center()], 6).unwrap();
        assert_eq!(t.boxes.len(), 6);
        for x in &t.boxes {
            assert!((x.x1 - b.x1).abs() < 1e-12 && (x.y2 - b.y2).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_track_midpoint() {
        let a = BBox::from_center(0.2, 0.5, 0.2, 0.2);
        let b = BBox::from_center(0.8, 0.5, 0.4, 0.2);
        let t = build_box_trajectory(vec![1], a, b, &[a.center(), b.center()], 3).unwrap();
        let mid = t.boxes[1];
        assert!((mid.center().0 - 0.5).abs() < 1e-12);
        assert!((mid.width() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn right_angle_track_by_arc_length() {
        // legs of 0.3 and 0.1 scaled from 3 and 1
        let s = 0.1;
        let track = [(0.1, 0.1), (0.1 + 3.0 * s, 0.1), (0.1 + 3.0 * s, 0.1 + s)];
        let a = BBox::from_center(track[0].0, track[0].1, 0.1, 0.1);
        let b = BBox::from_center(track[2].0, track[2].1, 0.1, 0.1);
        let t = build_box_trajectory(vec![1], a, b, &track, 5).unwrap();
        let expect = [(0.1, 0.1), (0.2, 0.1), (0.3, 0.1), (0.4, 0.1), (0.4, 0.2)];
        for (bx, e) in t.boxes.iter().zip(expect) {
            let c = bx.center();
            assert!((c.0 - e.0).abs() < 1e-9 && (c.1 - e.1).abs() < 1e-9, "{c:?} vs {e:?}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = BBox::from_center(0.3, 0.3, 0.2, 0.2);
        let b = BBox::from_center(0.6, 0.3, 0.2, 0.2);
        assert!(build_box_trajectory(vec![1], a, b, &[a.center(), b.center()], 1).is_err());
        assert!(build_box_trajectory(vec![1], a, b, &[a.center()], 4).is_err());
        assert!(build_box_trajectory(vec![1], a, b, &[a.center(), a.center()], 4).is_err());
        assert!(build_box_trajectory(vec![1], a, b, &[(0.0, 0.0), b.center()], 4).is_err());
    }
}
