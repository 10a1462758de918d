use super::{gemm_f64, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution. Kernels are square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/columns appended to a transposed convolution's output.
    pub output_padding: usize,
    pub transposed: bool,
    pub depthwise: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
            output_padding: 0,
            transposed: false,
            depthwise: false,
        }
    }

    /// Stride-1 convolution with `kernel_size / 2` zero padding.
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self::new(in_channels, out_channels, kernel_size, 1, kernel_size / 2)
    }

    pub fn transposed(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Self {
        ConvSpec {
            output_padding,
            transposed: true,
            ..Self::new(in_channels, out_channels, kernel_size, stride, padding)
        }
    }

    /// Same-size depthwise convolution.
    pub fn depthwise(channels: usize, kernel_size: usize) -> Self {
        ConvSpec {
            depthwise: true,
            ..Self::same(channels, channels, kernel_size)
        }
    }

    /// Weight layout: `[out, in, k, k]` for ordinary convolutions,
    /// `[in, out, k, k]` for transposed ones and `[channels, 1, k, k]` for
    /// depthwise ones.
    pub fn weight_shape(&self) -> [usize; 4] {
        let k = self.kernel_size;
        if self.depthwise {
            [self.out_channels, 1, k, k]
        } else if self.transposed {
            [self.in_channels, self.out_channels, k, k]
        } else {
            [self.out_channels, self.in_channels, k, k]
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (k, s, p) = (self.kernel_size, self.stride, self.padding);
        if self.transposed {
            let f = |n: usize| (n.checked_sub(1)? * s + k + self.output_padding).checked_sub(2 * p);
            Some((f(h)?, f(w)?))
        } else {
            let f = |n: usize| Some((n + 2 * p).checked_sub(k)? / s + 1);
            Some((f(h)?, f(w)?))
        }
    }

    fn validate(&self, op: &'static str, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize)> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!("{op}: zero kernel or stride")));
        }
        if self.depthwise && self.in_channels != self.out_channels {
            return Err(Error::InvalidArgument(format!(
                "{op}: depthwise needs in == out channels"
            )));
        }
        if x.channels() != self.in_channels {
            return Err(Error::shape(
                op,
                format!("channel axis: input has {}, spec wants {}", x.channels(), self.in_channels),
            ));
        }
        if w.shape() != self.weight_shape() {
            return Err(Error::shape(
                op,
                format!("weight {:?}, spec wants {:?}", w.shape(), self.weight_shape()),
            ));
        }
        if let Some(b) = b {
            if b.numel() != self.out_channels {
                return Err(Error::shape(
                    op,
                    format!("bias has {} entries, spec wants {}", b.numel(), self.out_channels),
                ));
            }
        }
        self.output_size(x.height(), x.width()).filter(|&(h, w)| h > 0 && w > 0).ok_or_else(|| {
            Error::shape(
                op,
                format!("spatial axes {}x{} too small for {:?}", x.height(), x.width(), self),
            )
        })
    }
}

/// Valid output range `[lo, hi)` of `o` such that `o * s + tap - p` lands in `0..n`.
#[inline]
fn valid_range(n: usize, out: usize, s: usize, tap: usize, p: usize) -> (usize, usize) {
    let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
    let hi = if n + p > tap { ((n + p - tap - 1) / s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], c: usize, h: usize, w: usize, spec: &ConvSpec, oh: usize, ow: usize) -> Vec<f32> {
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding);
    let cols = oh * ow;
    let mut out = vec![0f32; c * k * k * cols];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(h, oh, s, ky, p);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(w, ow, s, kx, p);
                let row = &mut out[((ci * k + ky) * k + kx) * cols..][..cols];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ky - p;
                    let src = &plane[iy * w..(iy + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        let ix0 = ox_lo + kx - p;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    out
}

fn finish(acc: &[f64], bias: Option<&Tensor>, channels: usize, plane: usize, out: &mut [f32]) {
    for c in 0..channels {
        let b = bias.map_or(0.0, |b| b.data()[c] as f64);
        for (o, &a) in out[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(&acc[c * plane..(c + 1) * plane])
        {
            *o = (a + b) as f32;
        }
    }
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if spec.transposed {
        return Err(Error::InvalidArgument("conv2d: spec is transposed".into()));
    }
    if spec.depthwise {
        return depthwise_conv2d(x, w, b, spec);
    }
    let (oh, ow) = spec.validate("conv2d", x, w, b)?;
    let [n, c, h, wd] = x.shape();
    let co = spec.out_channels;
    let k = spec.kernel_size;
    let mut out = Tensor::zeros([n, co, oh, ow]);
    let mut acc = vec![0f64; co * oh * ow];
    for item in 0..n {
        let xi = x.item(item);
        let pointwise = k == 1 && spec.stride == 1 && spec.padding == 0;
        if pointwise {
            gemm_f64(w.data(), xi, co, c, oh * ow, &mut acc);
        } else {
            let cols = im2col(xi, c, h, wd, spec, oh, ow);
            gemm_f64(w.data(), &cols, co, c * k * k, oh * ow, &mut acc);
        }
        finish(&acc, b, co, oh * ow, out.item_mut(item));
    }
    Ok(out)
}

/// Transposed convolution (the adjoint of [`conv2d`] with the same geometry).
pub fn conv_transpose2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if !spec.transposed || spec.depthwise {
        return Err(Error::InvalidArgument(
            "conv_transpose2d: spec must be transposed and not depthwise".into(),
        ));
    }
    let (oh, ow) = spec.validate("conv_transpose2d", x, w, b)?;
    let [n, ci, h, wd] = x.shape();
    let co = spec.out_channels;
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding);
    let taps = co * k * k;

    // [in, (out, ky, kx)] -> [(out, ky, kx), in]
    let wd_ = w.data();
    let mut wt = vec![0f32; taps * ci];
    for i in 0..ci {
        for t in 0..taps {
            wt[t * ci + i] = wd_[i * taps + t];
        }
    }

    let mut out = Tensor::zeros([n, co, oh, ow]);
    let mut cols = vec![0f64; taps * h * wd];
    let mut acc = vec![0f64; co * oh * ow];
    for item in 0..n {
        gemm_f64(&wt, x.item(item), taps, ci, h * wd, &mut cols);
        acc.fill(0.0);
        for o in 0..co {
            let dst = &mut acc[o * oh * ow..(o + 1) * oh * ow];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[((o * k + ky) * k + kx) * h * wd..][..h * wd];
                    for iy in 0..h {
                        let oy = iy * s + ky;
                        if oy < p || oy - p >= oh {
                            continue;
                        }
                        let row = &mut dst[(oy - p) * ow..(oy - p + 1) * ow];
                        for ix in 0..wd {
                            let ox = ix * s + kx;
                            if ox >= p && ox - p < ow {
                                row[ox - p] += src[iy * wd + ix];
                            }
                        }
                    }
                }
            }
        }
        finish(&acc, b, co, oh * ow, out.item_mut(item));
    }
    Ok(out)
}

/// Per-channel convolution: output channel `c` only sees input channel `c`.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    if !spec.depthwise || spec.transposed {
        return Err(Error::InvalidArgument(
            "depthwise_conv2d: spec must be depthwise".into(),
        ));
    }
    let (oh, ow) = spec.validate("depthwise_conv2d", x, w, b)?;
    let [n, c, h, wd] = x.shape();
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut acc = vec![0f64; oh * ow];
    for item in 0..n {
        for ch in 0..c {
            acc.fill(0.0);
            let plane = x.plane(item, ch);
            let kern = &w.data()[ch * k * k..(ch + 1) * k * k];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(h, oh, s, ky, p);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(wd, ow, s, kx, p);
                    let wv = kern[ky * k + kx] as f64;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let src = &plane[iy * wd..(iy + 1) * wd];
                        let dst = &mut acc[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = ox_lo + kx - p;
                            for (d, &v) in dst[ox_lo..ox_hi].iter_mut().zip(&src[ix0..]) {
                                *d += wv * v as f64;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                dst[ox] += wv * src[ox * s + kx - p] as f64;
                            }
                        }
                    }
                }
            }
            let bias = b.map_or(0.0, |b| b.data()[ch] as f64);
            for (o, &a) in out.plane_mut(item, ch).iter_mut().zip(&acc) {
                *o = (a + bias) as f32;
            }
        }
    }
    Ok(out)
}
