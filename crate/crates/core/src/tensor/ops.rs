use super::{gemm_f64, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Gelu,
    Softplus,
    Exp,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        let x = v as f64;
        let y = match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            Activation::Softplus => softplus(x),
            Activation::Exp => x.exp(),
        };
        y as f32
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub fn activate_in_place(x: &mut Tensor, kind: Activation) {
    for v in x.data_mut() {
        *v = kind.apply(*v);
    }
}

/// Per-site affine map along the channel axis. `w` is `[out, in, 1, 1]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let [n, c, h, wd] = x.shape();
    let [o, i, kh, kw] = w.shape();
    if i != c || kh != 1 || kw != 1 {
        return Err(Error::shape(
            "linear",
            format!("weight {:?} cannot map {c} channels", w.shape()),
        ));
    }
    if let Some(b) = b {
        if b.numel() != o {
            return Err(Error::shape(
                "linear",
                format!("bias has {} entries, weight has {o} rows", b.numel()),
            ));
        }
    }
    let plane = h * wd;
    let mut out = Tensor::zeros([n, o, h, wd]);
    let mut acc = vec![0f64; o * plane];
    for item in 0..n {
        gemm_f64(w.data(), x.item(item), o, c, plane, &mut acc);
        let dst = out.item_mut(item);
        for r in 0..o {
            let bias = b.map_or(0.0, |b| b.data()[r] as f64);
            for (d, &a) in dst[r * plane..(r + 1) * plane]
                .iter_mut()
                .zip(&acc[r * plane..(r + 1) * plane])
            {
                *d = (a + bias) as f32;
            }
        }
    }
    Ok(out)
}

/// Normalizes across channels at every spatial site.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    if gain.numel() != c || bias.numel() != c {
        return Err(Error::shape(
            "layer_norm",
            format!("gain/bias sizes {}/{} for {c} channels", gain.numel(), bias.numel()),
        ));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    let mut mean = vec![0f64; plane];
    let mut var = vec![0f64; plane];
    for item in 0..n {
        let src = x.item(item);
        mean.fill(0.0);
        var.fill(0.0);
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= c as f64;
        }
        for ch in 0..c {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(&src[ch * plane..(ch + 1) * plane]) {
                let d = v as f64 - m;
                *s += d * d;
            }
        }
        for s in &mut var {
            *s = 1.0 / (*s / c as f64 + eps).sqrt();
        }
        let dst = out.item_mut(item);
        for ch in 0..c {
            let g = gain.data()[ch] as f64;
            let b = bias.data()[ch] as f64;
            let range = ch * plane..(ch + 1) * plane;
            for (((d, &v), &m), &r) in dst[range.clone()].iter_mut().zip(&src[range]).zip(&mean).zip(&var) {
                *d = ((v as f64 - m) * r * g + b) as f32;
            }
        }
    }
    Ok(out)
}

/// Numerically stable softmax of `values` in place.
pub(crate) fn softmax_slice(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Softmax along `axis` (0..4).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= 4 {
        return Err(Error::InvalidArgument(format!("softmax axis {axis} out of range")));
    }
    let shape = x.shape();
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let mut buf = vec![0f64; len];
    let data = out.data_mut();
    for o in 0..outer {
        for s in 0..stride {
            let base = o * len * stride + s;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = data[base + i * stride] as f64;
            }
            softmax_slice(&mut buf);
            for (i, b) in buf.iter().enumerate() {
                data[base + i * stride] = *b as f32;
            }
        }
    }
    Ok(out)
}
