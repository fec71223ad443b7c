//! Clip files and their JSON sidecars.
//!
//! A clip file is `"DAVVID01"`, the dimensions `(f, c, h, w)` as
//! little-endian `u32`, then `f·c·h·w` little-endian `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CameraParams;
use crate::caption::ColorKey;
use crate::geometry::BBox;
use crate::video::VideoClip;
use crate::{Error, Result};

pub const CLIP_MAGIC: &[u8; 8] = b"DAVVID01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub color: ColorKey,
    pub token_positions: Vec<usize>,
    pub boxes: Vec<BBox>,
}

/// Sidecar metadata written next to a clip file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ClipMeta {
    pub caption: Vec<String>,
    pub objects: Vec<ObjectTrack>,
    pub camera: Option<CameraParams>,
}

impl VideoClip {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.data.len());
        out.extend_from_slice(CLIP_MAGIC);
        for d in self.dims() {
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
        if bytes.len() < 24 || &bytes[..8] != CLIP_MAGIC {
            return Err(bad("missing DAVVID01 header".into()));
        }
        let dim = |i: usize| {
            let o = 8 + 4 * i;
            u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        };
        let (f, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
        let n = f
            .checked_mul(c)
            .and_then(|v| v.checked_mul(h))
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| bad("dimension overflow".into()))?;
        if bytes.len() != 24 + 4 * n {
            return Err(bad(format!(
                "dims ({f},{c},{h},{w}) need {} bytes, file has {}",
                24 + 4 * n,
                bytes.len()
            )));
        }
        let data = bytes[24..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        VideoClip::from_data(f, c, h, w, data)
    }
}

pub fn write_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    std::fs::write(path, clip.to_bytes())?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<VideoClip> {
    VideoClip::from_bytes(&std::fs::read(path)?, path)
}

pub fn write_meta(path: &Path, meta: &ClipMeta) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<ClipMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_rejections() {
        let clip = VideoClip::from_data(2, 1, 1, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = clip.to_bytes();
        assert_eq!(&bytes[..8], b"DAVVID01");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(VideoClip::from_bytes(&bytes, Path::new("m")).unwrap(), clip);
        assert!(VideoClip::from_bytes(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        let mut bad = bytes;
        bad[3] = 0;
        assert!(VideoClip::from_bytes(&bad, Path::new("m")).is_err());
    }
}
