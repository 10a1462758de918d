//! Quantization, the discretized Gaussian likelihood and the channel-spatial
//! context model that predicts a `(mu, sigma)` pair for every latent element.
//!
//! Chunks are indexed from zero here: chunk 0 has an empty channel context.

mod context;

pub use context::{channel_context, estimate_params, spatial_context, step_params};

use libm::erfc;

use crate::error::{Error, Result};
use crate::tensor::ops::softplus;
use crate::tensor::Tensor;
use crate::transform::{ModelWeights, LAMBDAS};

/// Lower bound on every predicted scale.
pub const SIGMA_MIN: f64 = 0.11;

/// Per-element Gaussian parameters of a latent slice.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

/// Decoding phase inside one chunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Anchor,
    NonAnchor,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::Anchor, Phase::NonAnchor];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Anchor => "anchor",
            Phase::NonAnchor => "nonanchor",
        }
    }
}

/// Uniform split of the latent channels into ordered chunks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkLayout {
    pub chunks: usize,
    pub width: usize,
}

impl ChunkLayout {
    pub fn new(channels: usize, chunks: usize) -> Result<Self> {
        if chunks == 0 || !channels.is_multiple_of(chunks) {
            return Err(Error::InvalidArgument(format!(
                "{channels} channels cannot be split into {chunks} equal chunks"
            )));
        }
        Ok(ChunkLayout {
            chunks,
            width: channels / chunks,
        })
    }

    pub fn channels(&self, chunk: usize) -> std::ops::Range<usize> {
        chunk * self.width..(chunk + 1) * self.width
    }
}

/// Two-colour parity split of the latent grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckerboardMask;

impl CheckerboardMask {
    #[inline]
    pub fn is_anchor(i: usize, j: usize) -> bool {
        (i + j).is_multiple_of(2)
    }

    #[inline]
    pub fn phase_of(i: usize, j: usize) -> Phase {
        if Self::is_anchor(i, j) {
            Phase::Anchor
        } else {
            Phase::NonAnchor
        }
    }

    /// Row-major positions belonging to `phase`.
    pub fn positions(height: usize, width: usize, phase: Phase) -> Vec<(usize, usize)> {
        (0..height)
            .flat_map(|i| (0..width).map(move |j| (i, j)))
            .filter(|&(i, j)| Self::phase_of(i, j) == phase)
            .collect()
    }
}

/// `round(y - mu) + mu`, elementwise.
pub fn quantize(y: &Tensor, mu: &Tensor) -> Result<Tensor> {
    y.zip_map(mu, |v, m| (v - m).round() + m)
}

/// Upper tail `P(N(0,1) > t)`, accurate far into both tails.
#[inline]
pub fn upper_tail(t: f64) -> f64 {
    0.5 * erfc(t / std::f64::consts::SQRT_2)
}

/// `P(lo < N(0,1) < hi)` computed on whichever side avoids cancellation.
pub fn standard_interval(lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        upper_tail(lo) - upper_tail(hi)
    } else if hi <= 0.0 {
        upper_tail(-hi) - upper_tail(-lo)
    } else {
        1.0 - upper_tail(hi) - upper_tail(-lo)
    }
}

/// Mass of `N(0, sigma)` on `[r - 1/2, r + 1/2]`. `r` may carry a
/// fractional mean offset.
pub fn likelihood(r: f64, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma < SIGMA_MIN {
        return Err(Error::InvalidArgument(format!(
            "scale {sigma} is below the floor {SIGMA_MIN}"
        )));
    }
    Ok(standard_interval((r - 0.5) / sigma, (r + 0.5) / sigma))
}

/// Split into `(anchors, non_anchors)`, each zero outside its own positions.
pub fn checkerboard_split(x: &Tensor) -> (Tensor, Tensor) {
    let anchors = Tensor::from_fn(x.shape(), |n, c, i, j| {
        if CheckerboardMask::is_anchor(i, j) {
            x.at(n, c, i, j)
        } else {
            0.0
        }
    });
    let rest = Tensor::from_fn(x.shape(), |n, c, i, j| {
        if CheckerboardMask::is_anchor(i, j) {
            0.0
        } else {
            x.at(n, c, i, j)
        }
    });
    (anchors, rest)
}

pub fn checkerboard_merge(anchors: &Tensor, non_anchors: &Tensor) -> Result<Tensor> {
    if anchors.shape() != non_anchors.shape() {
        return Err(Error::shape(
            "checkerboard_merge",
            format!("{:?} vs {:?}", anchors.shape(), non_anchors.shape()),
        ));
    }
    Ok(Tensor::from_fn(anchors.shape(), |n, c, i, j| {
        if CheckerboardMask::is_anchor(i, j) {
            anchors.at(n, c, i, j)
        } else {
            non_anchors.at(n, c, i, j)
        }
    }))
}

/// Per-channel Gaussian prior of the hyper latent.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperPrior {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl HyperPrior {
    pub fn from_weights(weights: &ModelWeights) -> Result<Self> {
        let mean = weights.get("hyper_prior.mean")?.data().iter().map(|&v| v as f64).collect();
        let sigma = weights
            .get("hyper_prior.scale")?
            .data()
            .iter()
            .map(|&v| softplus(v as f64).max(SIGMA_MIN))
            .collect();
        Ok(HyperPrior { mean, sigma })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdLoss {
    pub loss: f64,
    pub mse: f64,
    pub bpp_y: f64,
    pub bpp_z: f64,
}

/// `lambda * 255^2 * MSE + bpp_y + bpp_z` over the pixel grid of `x`.
pub fn rd_loss(
    x: &Tensor,
    x_hat: &Tensor,
    y_likelihoods: &[f64],
    z_likelihoods: &[f64],
    lambda: f64,
) -> Result<RdLoss> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape(
            "rd_loss",
            format!("{:?} vs {:?}", x.shape(), x_hat.shape()),
        ));
    }
    if !LAMBDAS.contains(&lambda) {
        log::warn!("lambda {lambda} is not one of the presets {LAMBDAS:?}");
    }
    let pixels = (x.height() * x.width() * x.batch()) as f64;
    let sq: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    let mse = sq / x.numel() as f64;
    let bits = |p: &[f64]| -> f64 { p.iter().map(|&p| -p.log2()).sum::<f64>() / pixels };
    let (bpp_y, bpp_z) = (bits(y_likelihoods), bits(z_likelihoods));
    Ok(RdLoss {
        loss: lambda * 255.0 * 255.0 * mse + bpp_y + bpp_z,
        mse,
        bpp_y,
        bpp_z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_examples() {
        let y = Tensor::from_vec([1, 1, 1, 3], vec![0.4, 1.7, 0.25]).unwrap();
        let mu = Tensor::from_vec([1, 1, 1, 3], vec![0.0, 0.5, 0.25]).unwrap();
        assert_eq!(quantize(&y, &mu).unwrap().data(), &[0.0, 1.5, 0.25]);
    }

    #[test]
    fn likelihood_center_mass() {
        let p = likelihood(0.0, 0.5).unwrap();
        assert!((p - 0.682_689_492_137_085_9).abs() < 1e-12);
        assert!(likelihood(3.0, SIGMA_MIN).unwrap() < 1e-80);
        assert!(likelihood(0.0, 0.1).is_err());
    }

    #[test]
    fn checkerboard_counts() {
        assert_eq!(CheckerboardMask::positions(2, 2, Phase::Anchor), vec![(0, 0), (1, 1)]);
        assert_eq!(CheckerboardMask::positions(3, 3, Phase::Anchor).len(), 5);
        assert_eq!(CheckerboardMask::positions(3, 3, Phase::NonAnchor).len(), 4);
    }

    #[test]
    fn rd_loss_hand_value() {
        let x = Tensor::zeros([1, 1, 1, 1]);
        let xh = Tensor::full([1, 1, 1, 1], 0.001f32.sqrt());
        let y = [2f64.powf(-0.5)];
        let z = [2f64.powf(-0.05)];
        let r = rd_loss(&x, &xh, &y, &z, 0.013).unwrap();
        assert!((r.loss - 1.395_325).abs() < 1e-6, "{}", r.loss);
    }
}
