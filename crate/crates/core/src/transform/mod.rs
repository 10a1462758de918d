//! Analysis/synthesis transforms, hyper transforms, model configuration and
//! the weight store they read from.

mod manifest;
pub(crate) mod networks;
mod weights;

pub use manifest::{manifest, Init, ParamSpec};
pub use networks::{analyze, hyper_analyze, hyper_synthesize, residual_bottleneck, synthesize};
pub use weights::{encode_weight_file, init_weights, load_weights, save_weights, ModelWeights};

use crate::error::{Result, WeightsError};

/// Rate-distortion multipliers, one per quality preset.
pub const LAMBDAS: [f64; 5] = [0.0035, 0.0067, 0.013, 0.025, 0.05];

/// Spatial downsampling of the main transform.
pub const MAIN_STRIDE: usize = 16;
/// Spatial downsampling of image to hyper latent (main and hyper paths).
pub const TOTAL_STRIDE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Hyper latent channels.
    pub n: usize,
    /// Latent channels.
    pub m: usize,
    /// Channel chunks of the context model.
    pub k: usize,
    /// Local attention window side.
    pub window: usize,
    /// Index into [`LAMBDAS`].
    pub lambda_index: usize,
    /// Per-channel SSM state size.
    pub state_dim: usize,
    /// Attention heads.
    pub heads: usize,
    /// Output widths of the first three analysis stages (the fourth is `m`).
    pub analysis_widths: [usize; 3],
    /// Middle widths of the hyper analysis and hyper synthesis.
    pub hyper_widths: [usize; 2],
    /// Width of the parameter aggregation and attention.
    pub agg_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 128,
            m: 320,
            k: 5,
            window: 8,
            lambda_index: 0,
            state_dim: 16,
            heads: 8,
            analysis_widths: [192, 192, 240],
            hyper_widths: [256, 384],
            agg_width: 256,
        }
    }
}

impl ModelConfig {
    /// A narrow configuration with the same topology, for fast tests.
    pub fn small() -> Self {
        ModelConfig {
            n: 16,
            m: 40,
            k: 5,
            window: 8,
            lambda_index: 0,
            state_dim: 4,
            heads: 4,
            analysis_widths: [16, 16, 24],
            hyper_widths: [24, 40],
            agg_width: 32,
        }
    }

    pub fn with_lambda_index(mut self, index: usize) -> Self {
        self.lambda_index = index;
        self
    }

    pub fn lambda(&self) -> f64 {
        LAMBDAS[self.lambda_index]
    }

    /// Channel width of one chunk.
    pub fn chunk_width(&self) -> usize {
        self.m / self.k
    }

    /// Channel budget of the parameter aggregation input.
    pub fn agg_input(&self) -> usize {
        4 * self.chunk_width() + 2 * self.m
    }

    /// `[3, w1, w2, w3, m]`.
    pub fn main_widths(&self) -> [usize; 5] {
        let [a, b, c] = self.analysis_widths;
        [3, a, b, c, self.m]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(WeightsError::InvalidConfig(msg).into());
        let dims = [
            self.n,
            self.m,
            self.k,
            self.window,
            self.state_dim,
            self.heads,
            self.agg_width,
            self.analysis_widths[0],
            self.analysis_widths[1],
            self.analysis_widths[2],
            self.hyper_widths[0],
            self.hyper_widths[1],
        ];
        if dims.contains(&0) {
            return bad(format!("zero extent in {self:?}"));
        }
        if !self.m.is_multiple_of(self.k) {
            return bad(format!("M = {} is not divisible by K = {}", self.m, self.k));
        }
        if !self.m.is_multiple_of(2) {
            return bad(format!("M = {} must be even for the bottleneck blocks", self.m));
        }
        if !self.agg_width.is_multiple_of(self.heads) {
            return bad(format!(
                "aggregation width {} is not divisible by {} heads",
                self.agg_width, self.heads
            ));
        }
        if self.lambda_index >= LAMBDAS.len() {
            return bad(format!("lambda index {} out of range", self.lambda_index));
        }
        Ok(())
    }
}
