use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BoxTrajectory;
use crate::diffkit::{scaled_dot_attention, Real, Tensor};
use crate::geometry::BBox;
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 25.0;
pub const DEFAULT_TAU: f64 = 0.95;

/// Slack on the `t ≥ τ·t_max` test so that e.g. `0.95 · 1000` compares
/// equal to 950.
const TIME_TOL: f64 = 1e-9;

/// Encoder / middle / decoder thirds of the block stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockGroup {
    Encoder,
    Middle,
    Decoder,
}

impl BlockGroup {
    /// Group of block `index` in a stack of `blocks`: the first and last
    /// `⌊blocks/3⌋` (at least one when there are two or more blocks) are
    /// encoder and decoder, the rest middle.
    pub fn of(index: usize, blocks: usize) -> BlockGroup {
        let edge = if blocks >= 2 { (blocks / 3).max(1) } else { 0 };
        if index < edge {
            BlockGroup::Encoder
        } else if index >= blocks - edge {
            BlockGroup::Decoder
        } else {
            BlockGroup::Middle
        }
    }

    pub fn letter(self) -> char {
        match self {
            BlockGroup::Encoder => 'E',
            BlockGroup::Middle => 'M',
            BlockGroup::Decoder => 'D',
        }
    }
}

/// Which block groups receive amplification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub encoder: bool,
    pub middle: bool,
    pub decoder: bool,
}

impl Placement {
    pub const ALL: Placement = Placement {
        encoder: true,
        middle: true,
        decoder: true,
    };
    pub const NONE: Placement = Placement {
        encoder: false,
        middle: false,
        decoder: false,
    };

    pub fn enabled(&self, group: BlockGroup) -> bool {
        match group {
            BlockGroup::Encoder => self.encoder,
            BlockGroup::Middle => self.middle,
            BlockGroup::Decoder => self.decoder,
        }
    }

    /// All eight subsets in `E, M, D` bit order, empty set first.
    pub fn subsets() -> Vec<Placement> {
        (0..8)
            .map(|bits| Placement {
                encoder: bits & 4 != 0,
                middle: bits & 2 != 0,
                decoder: bits & 1 != 0,
            })
            .collect()
    }
}

impl Default for Placement {
    fn default() -> Self {
        Placement::ALL
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letters: Vec<String> = [BlockGroup::Encoder, BlockGroup::Middle, BlockGroup::Decoder]
            .into_iter()
            .filter(|g| self.enabled(*g))
            .map(|g| g.letter().to_string())
            .collect();
        if letters.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", letters.join(","))
        }
    }
}

impl FromStr for Placement {
    type Err = Error;

    /// Accepts comma-separated group letters (`E,M,D`, `M`, ...) or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let mut p = Placement::NONE;
        if s.trim().eq_ignore_ascii_case("none") {
            return Ok(p);
        }
        for part in s.split(',').map(str::trim) {
            match part {
                "E" | "e" => p.encoder = true,
                "M" | "m" => p.middle = true,
                "D" | "d" => p.decoder = true,
                other => {
                    return Err(Error::invalid(format!(
                        "placement {other:?} is not one of E, M, D"
                    )))
                }
            }
        }
        Ok(p)
    }
}

/// Strength, timing and bindings of the attention modulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationSpec {
    pub lambda: f64,
    /// Fraction of the training horizon above which amplification is on.
    pub tau: f64,
    pub objects: Vec<BoxTrajectory>,
    /// Caption position of the background word, if it is bound.
    pub background_token: Option<usize>,
    pub placement: Placement,
}

impl Default for ModulationSpec {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            objects: Vec::new(),
            background_token: None,
            placement: Placement::ALL,
        }
    }
}

impl ModulationSpec {
    /// No objects, no background: the modulation term is identically zero.
    pub fn is_inactive(&self) -> bool {
        self.objects.is_empty() && self.background_token.is_none()
    }

    /// Checks ranges and that no caption position is bound twice. With a
    /// caption length, also checks that bound positions are inside the
    /// caption and not `<sos>` (first) or `<eos>` (last).
    pub fn validate(&self, caption_len: Option<usize>) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("λ must be ≥ 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("τ must be in [0, 1], got {}", self.tau)));
        }
        let mut seen = BTreeSet::new();
        let positions = self
            .objects
            .iter()
            .flat_map(|o| o.token_positions.iter().copied())
            .chain(self.background_token);
        for pos in positions {
            if !seen.insert(pos) {
                return Err(Error::invalid(format!(
                    "caption position {pos} is bound to more than one region"
                )));
            }
            if let Some(len) = caption_len {
                if pos == 0 || pos + 1 >= len {
                    return Err(Error::invalid(format!(
                        "caption position {pos} is a boundary token or outside a caption of length {len}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Latent cells (row-major over `h × w`) whose centres lie inside `b`.
pub fn region_indices(b: &BBox, h: usize, w: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for y in 0..h {
        let cy = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let cx = (x as f64 + 0.5) / w as f64;
            if b.contains(cx, cy) {
                out.push(y * w + x);
            }
        }
    }
    out
}

/// [`region_indices`], falling back to the single cell containing the box
/// centre when the box covers no cell centre.
pub fn bound_region(b: &BBox, h: usize, w: usize) -> Vec<usize> {
    let cells = region_indices(b, h, w);
    if !cells.is_empty() {
        return cells;
    }
    let (cx, cy) = b.center();
    let x = ((cx * w as f64).floor().max(0.0) as usize).min(w - 1);
    let y = ((cy * h as f64).floor().max(0.0) as usize).min(h - 1);
    vec![y * w + x]
}

/// Modulation term `S` for one frame, `[h·w, caption_len]`.
///
/// A bound column holds `1 − |R|/(h·w)` inside its region while
/// `t ≥ τ·t_max` (0 afterwards) and `-inf` outside. The background word is
/// bound to the complement of the union of object regions. `<sos>`,
/// `<eos>` and unbound words stay 0.
pub fn modulation_term(
    spec: &ModulationSpec,
    frame: usize,
    t: usize,
    t_max: usize,
    h: usize,
    w: usize,
    caption_len: usize,
) -> Result<Tensor<f64>> {
    if h == 0 || w == 0 || caption_len == 0 {
        return Err(Error::invalid("modulation grid and caption must be non-empty"));
    }
    if t > t_max {
        return Err(Error::invalid(format!("timestep {t} beyond horizon {t_max}")));
    }
    spec.validate(Some(caption_len))?;
    let cells = h * w;
    let amplify = t as f64 >= spec.tau * t_max as f64 - TIME_TOL;
    let mut s = vec![0.0; cells * caption_len];
    let mut union = vec![false; cells];
    let bind = |region: &[usize], cols: &[usize], s: &mut [f64]| {
        let amp = if amplify {
            1.0 - region.len() as f64 / cells as f64
        } else {
            0.0
        };
        let mut inside = vec![false; cells];
        for &i in region {
            inside[i] = true;
        }
        for &j in cols {
            for (i, &is_in) in inside.iter().enumerate() {
                s[i * caption_len + j] = if is_in { amp } else { f64::NEG_INFINITY };
            }
        }
    };
    for obj in &spec.objects {
        let b = obj.boxes.get(frame).ok_or_else(|| {
            Error::invalid(format!(
                "trajectory has {} frames, frame {frame} requested",
                obj.boxes.len()
            ))
        })?;
        let region = bound_region(b, h, w);
        for &i in &region {
            union[i] = true;
        }
        bind(&region, &obj.token_positions, &mut s);
    }
    if let Some(bg) = spec.background_token {
        let region: Vec<usize> = (0..cells).filter(|&i| !union[i]).collect();
        bind(&region, &[bg], &mut s);
    }
    Tensor::new(&[cells, caption_len], s)
}

/// Attention bias `λ·S` for one frame. With `amplify == false` the
/// amplification entries are dropped and only suppression remains.
/// Suppressed entries stay `-inf` for every λ, including 0.
#[allow(clippy::too_many_arguments)]
pub fn modulation_bias<T: Real>(
    spec: &ModulationSpec,
    frame: usize,
    t: usize,
    t_max: usize,
    h: usize,
    w: usize,
    caption_len: usize,
    amplify: bool,
) -> Result<Tensor<T>> {
    let s = modulation_term(spec, frame, t, t_max, h, w, caption_len)?;
    Ok(Tensor::new(s.shape(), scale_term(s.data(), spec.lambda, amplify))
        .expect("shape is unchanged"))
}

fn scale_term<T: Real>(s: &[f64], lambda: f64, amplify: bool) -> Vec<T> {
    s.iter()
        .map(|&v| {
            if v == f64::NEG_INFINITY {
                T::neg_infinity()
            } else if amplify {
                T::cast_from(lambda * v)
            } else {
                T::zero()
            }
        })
        .collect()
}

/// `softmax((Q·Kᵀ + λ·S) / sqrt(d)) · V` for a single head.
pub fn modulated_cross_attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    s: &Tensor<f64>,
    lambda: f64,
) -> Result<Tensor<T>> {
    let bias = Tensor::new(s.shape(), scale_term(s.data(), lambda, true))?;
    scaled_dot_attention(q, k, v, Some(&bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::object_control::build_box_trajectory;

    fn fixed(tokens: Vec<usize>, b: BBox) -> BoxTrajectory {
        build_box_trajectory(tokens, b, b, &[b.center()], 2).unwrap()
    }

    #[test]
    fn block_groups_split_by_thirds() {
        let g: Vec<char> = (0..4).map(|i| BlockGroup::of(i, 4).letter()).collect();
        assert_eq!(g, ['E', 'M', 'M', 'D']);
        let g: Vec<char> = (0..6).map(|i| BlockGroup::of(i, 6).letter()).collect();
        assert_eq!(g, ['E', 'E', 'M', 'M', 'D', 'D']);
    }

    #[test]
    fn placement_parses_and_prints() {
        let p: Placement = "E,D".parse().unwrap();
        assert!(p.encoder && !p.middle && p.decoder);
        assert_eq!(p.to_string(), "E,D");
        assert_eq!("none".parse::<Placement>().unwrap(), Placement::NONE);
        assert!("X".parse::<Placement>().is_err());
        assert_eq!(Placement::subsets().len(), 8);
    }

    #[test]
    fn regions_by_cell_centres() {
        assert_eq!(region_indices(&BBox::FULL, 4, 4).len(), 16);
        assert_eq!(region_indices(&BBox::new(0.0, 0.0, 0.5, 0.5), 4, 4), vec![0, 1, 4, 5]);
        let tiny = BBox::new(0.55, 0.3, 0.6, 0.35);
        assert!(region_indices(&tiny, 4, 4).is_empty());
        assert_eq!(bound_region(&tiny, 4, 4), vec![6]);
    }

    #[test]
    fn quarter_box_and_full_box_values() {
        let spec = ModulationSpec {
            objects: vec![fixed(vec![1], BBox::new(0.0, 0.0, 0.5, 0.5))],
            ..Default::default()
        };
        let s = modulation_term(&spec, 0, 1000, 1000, 4, 4, 4).unwrap();
        for i in 0..16 {
            let v = s.data()[i * 4 + 1];
            if [0, 1, 4, 5].contains(&i) {
                assert_eq!(v, 0.75);
            } else {
                assert_eq!(v, f64::NEG_INFINITY);
            }
            assert_eq!(s.data()[i * 4], 0.0);
            assert_eq!(s.data()[i * 4 + 3], 0.0);
        }
        let late = modulation_term(&spec, 0, 900, 1000, 4, 4, 4).unwrap();
        assert_eq!(late.data()[1], 0.0);
        assert_eq!(late.data()[2 * 4 + 1], f64::NEG_INFINITY);

        let full = ModulationSpec {
            objects: vec![fixed(vec![1], BBox::FULL)],
            ..Default::default()
        };
        let s = modulation_term(&full, 0, 1000, 1000, 4, 4, 4).unwrap();
        assert!((0..16).all(|i| s.data()[i * 4 + 1] == 0.0));
    }

    #[test]
    fn background_is_complement() {
        let spec = ModulationSpec {
            objects: vec![
                fixed(vec![1], BBox::new(0.0, 0.0, 0.5, 0.5)),
                fixed(vec![2], BBox::new(0.5, 0.5, 1.0, 1.0)),
            ],
            background_token: Some(3),
            ..Default::default()
        };
        let s = modulation_term(&spec, 1, 1000, 1000, 4, 4, 5).unwrap();
        for i in 0..16 {
            let in_obj = s.data()[i * 5 + 1].is_finite() || s.data()[i * 5 + 2].is_finite();
            assert_eq!(s.data()[i * 5 + 3].is_finite(), !in_obj);
        }
        assert_eq!(s.data()[2 * 5 + 3], 0.5);
    }

    #[test]
    fn double_binding_and_boundaries_rejected() {
        let b = BBox::new(0.0, 0.0, 0.5, 0.5);
        let spec = ModulationSpec {
            objects: vec![fixed(vec![1], b), fixed(vec![1], b)],
            ..Default::default()
        };
        assert!(modulation_term(&spec, 0, 1000, 1000, 4, 4, 4).is_err());
        let spec = ModulationSpec {
            objects: vec![fixed(vec![3], b)],
            ..Default::default()
        };
        assert!(modulation_term(&spec, 0, 1000, 1000, 4, 4, 4).is_err());
    }

    #[test]
    fn exact_suppression_picks_first_value() {
        let q: Tensor<f64> = Tensor::from_f64(&[1, 2], &[0.3, -1.0]).unwrap();
        let k = Tensor::from_f64(&[2, 2], &[1.0, 2.0, -0.5, 0.4]).unwrap();
        let v = Tensor::from_f64(&[2, 3], &[1.5, -2.0, 0.25, 9.0, 9.0, 9.0]).unwrap();
        let s = Tensor::from_f64(&[1, 2], &[0.0, f64::NEG_INFINITY]).unwrap();
        let out = modulated_cross_attention(&q, &k, &v, &s, 25.0).unwrap();
        assert_eq!(out.data(), &[1.5, -2.0, 0.25]);
        let zero = Tensor::<f64>::zeros(&[1, 2]);
        let plain = scaled_dot_attention(&q, &k, &v, None).unwrap();
        assert_eq!(modulated_cross_attention(&q, &k, &v, &zero, 50.0).unwrap(), plain);
    }
}
