//! Dense NCHW tensors and the neural kernels the codec is built from.
//!
//! Everything is 32-bit float storage with row-major layout (width fastest).
//! Reductions accumulate in 64-bit so that every kernel produces the same bits
//! no matter how the loops are blocked internally.

mod conv;
mod gemm;
pub(crate) mod ops;

pub use conv::{conv2d, conv_transpose2d, depthwise_conv2d, ConvSpec};
pub use ops::{activation, activate_in_place, layer_norm, linear, softmax, Activation};

pub(crate) use gemm::gemm_f64;

use crate::error::{Error, Result};

/// Dense 4-axis array `(batch, channel, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The `height * width` plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let len = self.plane_len();
        let start = (n * self.shape[1] + c) * len;
        &self.data[start..start + len]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let len = self.plane_len();
        let start = (n * self.shape[1] + c) * len;
        &mut self.data[start..start + len]
    }

    /// All channels of batch item `n`, laid out `[channel][site]`.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape[1] * self.plane_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.shape[1] * self.plane_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "zip_map",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Inner product in 64-bit.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", first.shape, p.shape),
                ));
            }
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(b));
            }
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Channels `start..start + len`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if start + len > c {
            return Err(Error::shape(
                "narrow_channels",
                format!("channels {start}..{} out of {c}", start + len),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let item = self.item(b);
            data.extend_from_slice(&item[start * plane..(start + len) * plane]);
        }
        Ok(Tensor {
            shape: [n, len, h, w],
            data,
        })
    }

    /// Pads bottom and right edges up to `(height, width)` by replicating the
    /// last row and column.
    pub fn pad_edge(&self, height: usize, width: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if height < h || width < w || h == 0 || w == 0 {
            return Err(Error::shape(
                "pad_edge",
                format!("cannot pad {h}x{w} to {height}x{width}"),
            ));
        }
        Ok(Tensor::from_fn([n, c, height, width], |b, ch, y, x| {
            self.at(b, ch, y.min(h - 1), x.min(w - 1))
        }))
    }

    /// Pads bottom and right edges with zeros.
    pub fn pad_zero(&self, height: usize, width: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if height < h || width < w {
            return Err(Error::shape(
                "pad_zero",
                format!("cannot pad {h}x{w} to {height}x{width}"),
            ));
        }
        Ok(Tensor::from_fn([n, c, height, width], |b, ch, y, x| {
            if y < h && x < w {
                self.at(b, ch, y, x)
            } else {
                0.0
            }
        }))
    }

    /// Top-left `(height, width)` crop.
    pub fn crop(&self, height: usize, width: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if height > h || width > w {
            return Err(Error::shape(
                "crop",
                format!("cannot crop {h}x{w} to {height}x{width}"),
            ));
        }
        Ok(Tensor::from_fn([n, c, height, width], |b, ch, y, x| {
            self.at(b, ch, y, x)
        }))
    }
}
