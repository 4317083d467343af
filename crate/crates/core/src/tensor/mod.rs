//! Channel-major feature maps and the layer primitives of the network,
//! each with its backward pass.

mod act;
mod conv;
mod loss;
mod norm;
mod pool;
mod upsample;

pub use act::{
    full_relu, full_relu_backward, full_relu_backward_stacked, full_relu_stacked, relu,
    relu_backward,
};
pub use conv::{conv2d, conv2d_backward, ConvGrad, ConvKernelSet, ConvMode};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use norm::{
    batch_norm_backward, batch_norm_infer, batch_norm_train, instance_norm, instance_norm_backward,
    BatchNormCache, InstanceNormCache, NormGrad, NormKind, NormState, NORM_EPSILON, NORM_MOMENTUM,
};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolIndices};
pub use upsample::{upsample_bilinear_x2, upsample_bilinear_x2_backward};

use crate::error::{Error, Result};

/// A stack of `channels` 2D maps of `height × width`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCHW {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl TensorCHW {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::InvalidShape(format!(
                "{} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Stacks tensors of equal spatial size along the channel axis.
    pub fn concat(parts: &[&TensorCHW]) -> Result<TensorCHW> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of zero tensors".into()))?;
        let (h, w) = (first.height, first.width);
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.height != h || p.width != w {
                return Err(Error::InvalidShape(format!(
                    "concat {}x{} with {h}x{w}",
                    p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(TensorCHW {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Splits off channels `[at, C)` into a second tensor.
    pub fn split_channels(&self, at: usize) -> (TensorCHW, TensorCHW) {
        assert!(at <= self.channels);
        let cut = at * self.plane();
        (
            TensorCHW {
                channels: at,
                height: self.height,
                width: self.width,
                data: self.data[..cut].to_vec(),
            },
            TensorCHW {
                channels: self.channels - at,
                height: self.height,
                width: self.width,
                data: self.data[cut..].to_vec(),
            },
        )
    }

    pub fn add_assign(&mut self, other: &TensorCHW) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mirrors every map top-to-bottom.
    pub fn flip_vertical(&self) -> TensorCHW {
        let mut out = self.clone();
        let (h, w) = (self.height, self.width);
        for c in 0..self.channels {
            let src = self.channel(c);
            let dst = out.channel_mut(c);
            for y in 0..h {
                dst[y * w..(y + 1) * w].copy_from_slice(&src[(h - 1 - y) * w..(h - y) * w]);
            }
        }
        out
    }

    /// Mirrors every map left-to-right.
    pub fn flip_horizontal(&self) -> TensorCHW {
        let mut out = self.clone();
        let w = self.width;
        for row in out.data.chunks_mut(w) {
            row.reverse();
        }
        out
    }
}
