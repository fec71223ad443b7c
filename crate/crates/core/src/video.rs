use crate::diffkit::{Real, Tensor};
use crate::{Error, Result};

/// Dense clip `[frames, channels, height, width]`, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl VideoClip {
    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
            data: vec![0.0; frames * channels * height * width],
        }
    }

    pub fn from_data(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames * channels * height * width != data.len() || data.is_empty() {
            return Err(Error::shape(
                "VideoClip",
                format!(
                    "dims ({frames},{channels},{height},{width}) with {} values",
                    data.len()
                ),
            ));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    #[inline]
    pub fn index(&self, f: usize, c: usize, y: usize, x: usize) -> usize {
        ((f * self.channels + c) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, f: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(f, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(f, c, y, x);
        self.data[i] = v;
    }

    /// Channel-mean intensity of one frame, row-major `[height, width]`.
    pub fn luma(&self, f: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.height * self.width];
        for c in 0..self.channels {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.data[(f * self.channels + c) * self.height * self.width + i] as f64;
            }
        }
        let n = self.channels as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &self.dims(),
            self.data.iter().map(|&v| T::cast_from(v as f64)).collect(),
        )
        .expect("clip dims are consistent")
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let [f, c, h, w] = t.shape()[..] else {
            return Err(Error::shape("VideoClip::from_tensor", format!("{:?}", t.shape())));
        };
        Self::from_data(f, c, h, w, t.data().iter().map(|v| v.as_f64() as f32).collect())
    }
}
