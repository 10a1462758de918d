//! Window-based local attention: partition a featuremap into non-overlapping
//! `w x w` windows, run multi-head attention inside each window, reverse.

use crate::error::{Error, Result};
use crate::params::ParamScope;
use crate::tensor::ops::softmax_slice;
use crate::tensor::{linear, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub window: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl WindowConfig {
    pub fn new(window: usize, channels: usize, heads: usize) -> Result<Self> {
        if window == 0 || heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "window config: window {window}, {channels} channels over {heads} heads"
            )));
        }
        Ok(WindowConfig {
            window,
            heads,
            head_dim: channels / heads,
        })
    }

    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// Query/key/value/output projections (`[C, C, 1, 1]` weights, `[C]` biases).
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights<'a> {
    pub q_w: &'a Tensor,
    pub q_b: &'a Tensor,
    pub k_w: &'a Tensor,
    pub k_b: &'a Tensor,
    pub v_w: &'a Tensor,
    pub v_b: &'a Tensor,
    pub o_w: &'a Tensor,
    pub o_b: &'a Tensor,
}

impl<'a> AttentionWeights<'a> {
    pub fn from_scope(scope: &ParamScope<'a>) -> Result<Self> {
        Ok(AttentionWeights {
            q_w: scope.get("q.weight")?,
            q_b: scope.get("q.bias")?,
            k_w: scope.get("k.weight")?,
            k_b: scope.get("k.bias")?,
            v_w: scope.get("v.weight")?,
            v_b: scope.get("v.bias")?,
            o_w: scope.get("o.weight")?,
            o_b: scope.get("o.bias")?,
        })
    }
}

/// Splits `[B, C, H, W]` into `[B * (H/w) * (W/w), C, w, w]`; windows are
/// ordered row-major over the window grid, tokens row-major inside a window.
pub fn window_partition(x: &Tensor, window: usize) -> Result<Tensor> {
    let [b, c, h, w] = x.shape();
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(
            "window_partition",
            format!("{h}x{w} is not divisible by window {window}"),
        ));
    }
    let (nh, nw) = (h / window, w / window);
    let mut out = Vec::with_capacity(x.numel());
    for item in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                for ch in 0..c {
                    let plane = x.plane(item, ch);
                    for ty in 0..window {
                        let row = (wy * window + ty) * w + wx * window;
                        out.extend_from_slice(&plane[row..row + window]);
                    }
                }
            }
        }
    }
    Tensor::from_vec([b * nh * nw, c, window, window], out)
}

/// Inverse of [`window_partition`] for a `height x width` featuremap.
pub fn window_reverse(windows: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [nwin, c, window, wy_] = windows.shape();
    if window != wy_ || window == 0 || !height.is_multiple_of(window) || !width.is_multiple_of(window) {
        return Err(Error::shape(
            "window_reverse",
            format!("windows {:?} cannot tile {height}x{width}", windows.shape()),
        ));
    }
    let (nh, nw) = (height / window, width / window);
    if nwin % (nh * nw) != 0 {
        return Err(Error::shape(
            "window_reverse",
            format!("{nwin} windows do not tile {height}x{width}"),
        ));
    }
    let b = nwin / (nh * nw);
    let mut out = Tensor::zeros([b, c, height, width]);
    for item in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                let win = (item * nh + wy) * nw + wx;
                for ch in 0..c {
                    let src = windows.plane(win, ch);
                    let dst = out.plane_mut(item, ch);
                    for ty in 0..window {
                        let row = (wy * window + ty) * width + wx * window;
                        dst[row..row + window].copy_from_slice(&src[ty * window..(ty + 1) * window]);
                    }
                }
            }
        }
    }
    Ok(out)
}

struct Projected {
    q: Tensor,
    k: Tensor,
    v: Tensor,
}

fn project(windows: &Tensor, w: &AttentionWeights<'_>, cfg: &WindowConfig) -> Result<Projected> {
    if windows.channels() != cfg.width() {
        return Err(Error::shape(
            "local_attention",
            format!("{} channels, config expects {}", windows.channels(), cfg.width()),
        ));
    }
    Ok(Projected {
        q: linear(windows, w.q_w, Some(w.q_b))?,
        k: linear(windows, w.k_w, Some(w.k_b))?,
        v: linear(windows, w.v_w, Some(w.v_b))?,
    })
}

/// Attention probabilities of window `win`, head `head`: `tokens x tokens`,
/// row `i` is the distribution of query `i` over keys.
fn probs(p: &Projected, win: usize, head: usize, cfg: &WindowConfig, key_mask: Option<&[bool]>) -> Vec<f64> {
    let t = p.q.plane_len();
    let scale = 1.0 / (cfg.head_dim as f64).sqrt();
    let mut logits = vec![0.0; t * t];
    for ch in head * cfg.head_dim..(head + 1) * cfg.head_dim {
        let q = p.q.plane(win, ch);
        let k = p.k.plane(win, ch);
        for i in 0..t {
            let qi = q[i] as f64;
            let row = &mut logits[i * t..(i + 1) * t];
            for (l, &kj) in row.iter_mut().zip(k) {
                *l += qi * kj as f64;
            }
        }
    }
    for row in logits.chunks_exact_mut(t) {
        for (j, l) in row.iter_mut().enumerate() {
            *l = match key_mask {
                Some(m) if !m[j] => f64::NEG_INFINITY,
                _ => *l * scale,
            };
        }
        softmax_slice(row);
    }
    logits
}

fn attend(windows: &Tensor, w: &AttentionWeights<'_>, cfg: &WindowConfig, mask: Option<&[Vec<bool>]>) -> Result<Tensor> {
    let p = project(windows, w, cfg)?;
    let t = windows.plane_len();
    let mut mixed = Tensor::zeros(windows.shape());
    let mut acc = vec![0.0f64; t];
    for win in 0..windows.batch() {
        let key_mask = mask.map(|m| m[win].as_slice());
        for head in 0..cfg.heads {
            let a = probs(&p, win, head, cfg, key_mask);
            for ch in head * cfg.head_dim..(head + 1) * cfg.head_dim {
                let v = p.v.plane(win, ch);
                for (i, o) in acc.iter_mut().enumerate() {
                    *o = a[i * t..(i + 1) * t]
                        .iter()
                        .zip(v)
                        .map(|(&aij, &vj)| aij * vj as f64)
                        .sum();
                }
                for (d, &o) in mixed.plane_mut(win, ch).iter_mut().zip(&acc) {
                    *d = o as f32;
                }
            }
        }
    }
    linear(&mixed, w.o_w, Some(w.o_b))
}

/// Scaled dot-product attention inside every window (batch item) followed by
/// the output projection. Tokens never attend across windows.
pub fn local_attention(windows: &Tensor, weights: &AttentionWeights<'_>, cfg: &WindowConfig) -> Result<Tensor> {
    attend(windows, weights, cfg, None)
}

/// Per-window, per-head attention matrices, `[window][head][query][key]`.
pub fn attention_probabilities(
    windows: &Tensor,
    weights: &AttentionWeights<'_>,
    cfg: &WindowConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let p = project(windows, weights, cfg)?;
    Ok((0..windows.batch())
        .map(|win| (0..cfg.heads).map(|h| probs(&p, win, h, cfg, None)).collect())
        .collect())
}

/// `reverse(attention(partition(x)))`.
///
/// Extents that are not multiples of the window are zero-padded up to the
/// next multiple; padded tokens are masked out as keys and cropped from the
/// output, so an edge window behaves like a smaller window.
pub fn wla(x: &Tensor, weights: &AttentionWeights<'_>, cfg: &WindowConfig) -> Result<Tensor> {
    let [_, _, h, w] = x.shape();
    let win = cfg.window;
    if h % win == 0 && w % win == 0 {
        let windows = window_partition(x, win)?;
        return window_reverse(&local_attention(&windows, weights, cfg)?, h, w);
    }
    let (ph, pw) = (h.div_ceil(win) * win, w.div_ceil(win) * win);
    let padded = x.pad_zero(ph, pw)?;
    let windows = window_partition(&padded, win)?;
    let (nh, nw) = (ph / win, pw / win);
    let mask: Vec<Vec<bool>> = (0..windows.batch())
        .map(|i| {
            let (wy, wx) = ((i / nw) % nh, i % nw);
            (0..win * win)
                .map(|t| wy * win + t / win < h && wx * win + t % win < w)
                .collect()
        })
        .collect();
    let out = attend(&windows, weights, cfg, Some(&mask))?;
    window_reverse(&out, ph, pw)?.crop(h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_keeps_row_major_order() {
        let x = Tensor::from_fn([1, 2, 4, 4], |_, c, y, x| (c * 16 + y * 4 + x) as f32);
        let w = window_partition(&x, 4).unwrap();
        assert_eq!(w.shape(), [1, 2, 4, 4]);
        assert_eq!(w.data(), x.data());
    }

    #[test]
    fn counts_windows() {
        let x = Tensor::zeros([1, 3, 16, 16]);
        assert_eq!(window_partition(&x, 8).unwrap().shape(), [4, 3, 8, 8]);
        assert!(window_partition(&Tensor::zeros([1, 1, 12, 16]), 8).is_err());
    }

    #[test]
    fn config_validates_heads() {
        assert!(WindowConfig::new(8, 256, 8).is_ok());
        assert!(WindowConfig::new(8, 250, 8).is_err());
        assert!(WindowConfig::new(0, 256, 8).is_err());
    }
}
