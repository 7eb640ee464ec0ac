use crate::image::Image;
use crate::{Error, Result};

/// Channels-last activation tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "tensor buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
            data: img.data().to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Pads by replicating the border pixels.
    pub fn pad_replicate(&self, top: usize, bottom: usize, left: usize, right: usize) -> Tensor {
        let h = self.height + top + bottom;
        let w = self.width + left + right;
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            let sy = y.saturating_sub(top).min(self.height - 1);
            for x in 0..w {
                let sx = x.saturating_sub(left).min(self.width - 1);
                let i = (sy * self.width + sx) * c;
                data.extend_from_slice(&self.data[i..i + c]);
            }
        }
        Tensor {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    /// Rows `y0..y1` (all columns).
    pub fn rows(&self, y0: usize, y1: usize) -> Tensor {
        let stride = self.width * self.channels;
        Tensor {
            height: y1 - y0,
            width: self.width,
            channels: self.channels,
            data: self.data[y0 * stride..y1 * stride].to_vec(),
        }
    }
}
