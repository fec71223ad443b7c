//! Viewing formats: one binary PPM per frame and an animated GIF. The clip
//! file stays the source of truth; these are lossy 8-bit renderings.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::video::VideoClip;
use crate::{Error, Result};

fn rgb8(clip: &VideoClip, f: usize, scale: usize) -> Result<Vec<u8>> {
    if clip.channels != 3 {
        return Err(Error::invalid(format!(
            "image export needs 3 channels, clip has {}",
            clip.channels
        )));
    }
    let (h, w) = (clip.height * scale, clip.width * scale);
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = clip.get(f, c, y / scale, x / scale);
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Writes frame `f` as a binary (`P6`) pixmap.
pub fn write_ppm(path: &Path, clip: &VideoClip, f: usize) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", clip.width, clip.height).into_bytes();
    bytes.extend(rgb8(clip, f, 1)?);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes `frame_00.ppm`, `frame_01.ppm`, … into `dir`.
pub fn write_frames_ppm(dir: &Path, clip: &VideoClip) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..clip.frames)
        .map(|f| {
            let path = dir.join(format!("frame_{f:02}.ppm"));
            write_ppm(&path, clip, f).map(|_| path)
        })
        .collect()
}

/// Writes a looping GIF, each pixel enlarged to a `scale × scale` block.
pub fn write_gif(path: &Path, clip: &VideoClip, scale: usize) -> Result<()> {
    let scale = scale.max(1);
    let (w, h) = (clip.width * scale, clip.height * scale);
    let (w16, h16) = match (u16::try_from(w), u16::try_from(h)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::invalid(format!("GIF size {w}×{h} exceeds 65535"))),
    };
    let gif_err = |e: gif::EncodingError| Error::invalid(format!("GIF encoding: {e}"));
    let file = BufWriter::new(File::create(path)?);
    let mut enc = gif::Encoder::new(file, w16, h16, &[]).map_err(gif_err)?;
    enc.set_repeat(gif::Repeat::Infinite).map_err(gif_err)?;
    for f in 0..clip.frames {
        let mut frame = gif::Frame::from_rgb_speed(w16, h16, &rgb8(clip, f, scale)?, 10);
        frame.delay = 15;
        enc.write_frame(&frame).map_err(gif_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let mut clip = VideoClip::zeros(2, 3, 2, 3);
        clip.set(1, 0, 1, 2, 1.0);
        let paths = write_frames_ppm(dir.path(), &clip).unwrap();
        assert_eq!(paths.len(), 2);
        let bytes = std::fs::read(&paths[1]).unwrap();
        let header = b"P6\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 18);
        assert_eq!(&px[15..18], &[255, 0, 0]);
    }

    #[test]
    fn gif_is_written_with_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.gif");
        let clip = VideoClip::zeros(3, 3, 4, 4);
        write_gif(&path, &clip, 4).unwrap();
        assert_eq!(&std::fs::read(&path).unwrap()[..6], b"GIF89a");
    }
}
