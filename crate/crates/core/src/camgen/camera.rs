use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Camera control triplet: total x-pan and y-pan as fractions of the frame
/// size (positive = right/down) and the zoom ratio of the last frame
/// relative to the first (`cz > 1` zooms in).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
}

impl CameraParams {
    pub const STATIC: CameraParams = CameraParams {
        cx: 0.0,
        cy: 0.0,
        cz: 1.0,
    };

    pub fn new(cx: f64, cy: f64, cz: f64) -> Result<Self> {
        let p = Self { cx, cy, cz };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value, lo, hi) in [
            ("cx", self.cx, -1.0, 1.0),
            ("cy", self.cy, -1.0, 1.0),
            ("cz", self.cz, 0.5, 2.0),
        ] {
            if !(lo..=hi).contains(&value) {
                return Err(Error::CameraRange {
                    name,
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        *self == Self::STATIC
    }
}

impl fmt::Display for CameraParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.cx, self.cy, self.cz)
    }
}

/// Parses the `cx,cy,cz` command-line form.
impl FromStr for CameraParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, z] = parts[..] else {
            return Err(Error::invalid(format!(
                "camera must be three comma-separated numbers, got {s:?}"
            )));
        };
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad camera component {v:?}")))
        };
        Self::new(num(x)?, num(y)?, num(z)?)
    }
}

/// Draws an independent camera triplet: each pan is 0 with probability 1/3
/// and uniform on (-1, 1) otherwise; zoom is 1 with probability 1/3 and
/// `2^ω`, ω uniform on (-1, 1), otherwise.
pub fn sample_camera_params<R: Rng + ?Sized>(rng: &mut R) -> CameraParams {
    let pan = |rng: &mut R| {
        if rng.gen::<f64>() < 1.0 / 3.0 {
            0.0
        } else {
            rng.gen_range(-1.0..1.0)
        }
    };
    let cx = pan(rng);
    let cy = pan(rng);
    let cz = if rng.gen::<f64>() < 1.0 / 3.0 {
        1.0
    } else {
        2f64.powf(rng.gen_range(-1.0..1.0))
    };
    CameraParams { cx, cy, cz }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn parses_cli_form_and_checks_ranges() {
        let p: CameraParams = "0.5, -0.25,1.5".parse().unwrap();
        assert_eq!(p, CameraParams::new(0.5, -0.25, 1.5).unwrap());
        assert!("1.5,0,1".parse::<CameraParams>().is_err());
        assert!("0,0,3".parse::<CameraParams>().is_err());
        assert!("0,0".parse::<CameraParams>().is_err());
        assert_eq!(p.to_string().parse::<CameraParams>().unwrap(), p);
    }

    #[test]
    fn sampling_is_seeded_and_in_range() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_camera_params(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        for p in draw(6) {
            p.validate().unwrap();
        }
    }
}
