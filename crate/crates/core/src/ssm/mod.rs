//! Selective state-space machinery.
//!
//! A continuous diagonal system `h' = A h + B x, y = C h` is discretized with
//! a zero-order hold per token, then scanned sequentially. The selection
//! projections make `B_t`, `C_t` and the step size `delta_t` functions of the
//! current token.

mod scan;
mod ss2d;
mod vss;

pub use scan::{selective_scan, selective_scan_grad, ScanGradients, ScanState};
pub use ss2d::{ss2d, ss2d_path, ScanPath};
pub use vss::{vss_block, VssWeights};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamScope;
use crate::tensor::Tensor;

/// Below this `|delta * a|` the input gain uses its Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// Zero-order-hold discretization of one diagonal mode.
///
/// Returns `(a_bar, b_bar)` with `a_bar = exp(delta a)` and
/// `b_bar = (delta a)^-1 (exp(delta a) - 1) delta b`.
pub fn discretize(a: f64, b: f64, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "discretize: step size must be positive, got {delta}"
        )));
    }
    let (a_bar, gain) = zoh(a, delta);
    Ok((a_bar, gain * b))
}

/// `(exp(delta a), (exp(delta a) - 1) / a)`; the second factor times `b` is
/// the discretized input matrix.
#[inline(always)]
pub(crate) fn zoh(a: f64, delta: f64) -> (f64, f64) {
    let u = delta * a;
    let a_bar = u.exp();
    let gain = if u.abs() < SERIES_THRESHOLD {
        delta * (1.0 + u * (0.5 + u * (1.0 / 6.0 + u * (1.0 / 24.0))))
    } else {
        (a_bar - 1.0) / a
    };
    (a_bar, gain)
}

/// Partial derivatives of the input gain `(exp(delta a) - 1) / a` with
/// respect to `delta` and `a`, matching the branch used by [`zoh`].
#[inline]
pub(crate) fn zoh_gain_partials(a: f64, delta: f64, a_bar: f64) -> (f64, f64) {
    let u = delta * a;
    if u.abs() < SERIES_THRESHOLD {
        let d_delta = 1.0 + u * (1.0 + u * (0.5 + u * (1.0 / 6.0)));
        let d_a = delta * delta * (0.5 + u * (1.0 / 3.0 + u * (1.0 / 8.0)));
        (d_delta, d_a)
    } else {
        (a_bar, (u * a_bar - (a_bar - 1.0)) / (a * a))
    }
}

/// Parameters of one selective SSM over `dim` channels.
///
/// The selection projection maps a token `x_t` (length `dim`) to
/// `[dt_low (dt_rank), B_t (state_dim), C_t (state_dim)]`; the step size is
/// `delta_t = softplus(dt_proj * dt_low + dt_bias)` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams {
    pub dim: usize,
    pub state_dim: usize,
    pub dt_rank: usize,
    /// `dim x state_dim`, strictly negative.
    pub a: Vec<f64>,
    /// `(dt_rank + 2 state_dim) x dim`.
    pub x_proj_w: Vec<f64>,
    pub x_proj_b: Vec<f64>,
    /// `dim x dt_rank`.
    pub dt_proj_w: Vec<f64>,
    pub dt_bias: Vec<f64>,
    pub d_skip: Vec<f64>,
}

impl SsmParams {
    /// Low-rank width of the step-size projection for `dim` channels.
    pub fn dt_rank_for(dim: usize) -> usize {
        dim.div_ceil(16).max(1)
    }

    pub fn proj_rows(&self) -> usize {
        self.dt_rank + 2 * self.state_dim
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n, r) = (self.dim, self.state_dim, self.dt_rank);
        let checks = [
            ("a", self.a.len(), d * n),
            ("x_proj_w", self.x_proj_w.len(), (r + 2 * n) * d),
            ("x_proj_b", self.x_proj_b.len(), r + 2 * n),
            ("dt_proj_w", self.dt_proj_w.len(), d * r),
            ("dt_bias", self.dt_bias.len(), d),
            ("d_skip", self.d_skip.len(), d),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::shape(
                    "ssm params",
                    format!("{name} has {got} entries, expected {want}"),
                ));
            }
        }
        if let Some(bad) = self.a.iter().find(|&&v| !(v < 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "ssm params: state matrix entries must be negative, found {bad}"
            )));
        }
        Ok(())
    }

    /// Reads one SSM from a weight scope (`a`, `x_proj.weight`, ...).
    pub fn from_scope(scope: &ParamScope<'_>) -> Result<Self> {
        let w = SsmWeights::from_scope(scope)?;
        w.to_params()
    }

    /// Random parameters in the ranges the initializer uses.
    pub fn random(dim: usize, state_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Self::dt_rank_for(dim);
        let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
        let s = 1.0 / (dim as f64).sqrt();
        SsmParams {
            dim,
            state_dim,
            dt_rank: r,
            a: draw(dim * state_dim, -3.0, -0.05),
            x_proj_w: draw((r + 2 * state_dim) * dim, -s, s),
            x_proj_b: draw(r + 2 * state_dim, -0.1, 0.1),
            dt_proj_w: draw(dim * r, -1.0, 1.0),
            dt_bias: draw(dim, -4.0, -1.0),
            d_skip: draw(dim, 0.5, 1.5),
        }
    }

    /// The parameters as named tensors, with the names [`SsmWeights`] reads.
    pub fn to_tensors(&self) -> Result<Vec<(&'static str, Tensor)>> {
        let (d, n, r) = (self.dim, self.state_dim, self.dt_rank);
        let t = |shape: [usize; 4], v: &[f64]| Tensor::from_vec(shape, v.iter().map(|&x| x as f32).collect());
        Ok(vec![
            ("a", t([d, n, 1, 1], &self.a)?),
            ("x_proj.weight", t([r + 2 * n, d, 1, 1], &self.x_proj_w)?),
            ("x_proj.bias", t([r + 2 * n, 1, 1, 1], &self.x_proj_b)?),
            ("dt_proj.weight", t([d, r, 1, 1], &self.dt_proj_w)?),
            ("dt_proj.bias", t([d, 1, 1, 1], &self.dt_bias)?),
            ("d_skip", t([d, 1, 1, 1], &self.d_skip)?),
        ])
    }

    /// Rounds every parameter through `f32`, the precision of the weight
    /// store.
    pub fn to_f32_precision(&self) -> Self {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect();
        SsmParams {
            dim: self.dim,
            state_dim: self.state_dim,
            dt_rank: self.dt_rank,
            a: f(&self.a),
            x_proj_w: f(&self.x_proj_w),
            x_proj_b: f(&self.x_proj_b),
            dt_proj_w: f(&self.dt_proj_w),
            dt_bias: f(&self.dt_bias),
            d_skip: f(&self.d_skip),
        }
    }
}

/// Borrowed tensors of one SSM inside a weight store.
#[derive(Clone, Copy, Debug)]
pub struct SsmWeights<'a> {
    pub a: &'a Tensor,
    pub x_proj_w: &'a Tensor,
    pub x_proj_b: &'a Tensor,
    pub dt_proj_w: &'a Tensor,
    pub dt_bias: &'a Tensor,
    pub d_skip: &'a Tensor,
}

impl<'a> SsmWeights<'a> {
    pub fn from_scope(scope: &ParamScope<'a>) -> Result<Self> {
        Ok(SsmWeights {
            a: scope.get("a")?,
            x_proj_w: scope.get("x_proj.weight")?,
            x_proj_b: scope.get("x_proj.bias")?,
            dt_proj_w: scope.get("dt_proj.weight")?,
            dt_bias: scope.get("dt_proj.bias")?,
            d_skip: scope.get("d_skip")?,
        })
    }

    pub fn to_params(&self) -> Result<SsmParams> {
        let [dim, state_dim, _, _] = self.a.shape();
        let [_, dt_rank, _, _] = self.dt_proj_w.shape();
        let f = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let p = SsmParams {
            dim,
            state_dim,
            dt_rank,
            a: f(self.a),
            x_proj_w: f(self.x_proj_w),
            x_proj_b: f(self.x_proj_b),
            dt_proj_w: f(self.dt_proj_w),
            dt_bias: f(self.dt_bias),
            d_skip: f(self.d_skip),
        };
        p.validate()?;
        Ok(p)
    }
}
