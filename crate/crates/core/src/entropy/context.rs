use super::{checkerboard_split, EntropyParams, Phase, SIGMA_MIN};
use crate::attention::{wla, AttentionWeights, WindowConfig};
use crate::error::{Error, Result};
use crate::tensor::ops::softplus;
use crate::tensor::{activate_in_place, linear, Activation, Tensor};
use crate::transform::networks::{conv, vss};
use crate::transform::ModelWeights;

/// Channel context of `chunk` from the already decoded chunks `0..chunk`,
/// given as one tensor of `chunk * M/K` channels. Chunk 0 has no context and
/// gets zeros.
pub fn channel_context(decoded: &Tensor, chunk: usize, weights: &ModelWeights) -> Result<Tensor> {
    let cfg = weights.config();
    let cw = cfg.chunk_width();
    if chunk >= cfg.k || decoded.channels() != chunk * cw {
        return Err(Error::shape(
            "channel_context",
            format!(
                "chunk {chunk} of {} needs {} context channels, got {}",
                cfg.k,
                chunk * cw,
                decoded.channels()
            ),
        ));
    }
    let [n, _, h, w] = decoded.shape();
    if chunk == 0 {
        return Ok(Tensor::zeros([n, 2 * cw, h, w]));
    }
    let scope = weights.scope("ctx.channel").child(chunk);
    let f = vss(decoded, &scope.child("vss"))?;
    conv(&f, &scope.child("conv"), 1)
}

/// Spatial context of `chunk` from its anchor-masked latent (all zeros in
/// the anchor phase).
pub fn spatial_context(masked: &Tensor, chunk: usize, weights: &ModelWeights) -> Result<Tensor> {
    let cfg = weights.config();
    if chunk >= cfg.k || masked.channels() != cfg.chunk_width() {
        return Err(Error::shape(
            "spatial_context",
            format!("chunk {chunk} expects {} channels, got {}", cfg.chunk_width(), masked.channels()),
        ));
    }
    let scope = weights.scope("ctx.spatial").child(chunk);
    let f = vss(masked, &scope.child("vss"))?;
    conv(&f, &scope.child("conv"), 1)
}

/// Aggregates channel, spatial and hyper features into `(mu, sigma)` for
/// one chunk and phase.
pub fn estimate_params(
    f_c: &Tensor,
    f_s: &Tensor,
    hyper: &Tensor,
    chunk: usize,
    phase: Phase,
    weights: &ModelWeights,
) -> Result<EntropyParams> {
    let cfg = weights.config();
    let cw = cfg.chunk_width();
    if f_c.channels() != 2 * cw || f_s.channels() != 2 * cw || hyper.channels() != 2 * cfg.m {
        return Err(Error::shape(
            "estimate_params",
            format!(
                "channel budget {} + {} + {} does not match {} + {} + {}",
                f_c.channels(),
                f_s.channels(),
                hyper.channels(),
                2 * cw,
                2 * cw,
                2 * cfg.m
            ),
        ));
    }
    if chunk >= cfg.k {
        return Err(Error::InvalidArgument(format!("chunk {chunk} out of {}", cfg.k)));
    }
    let scope = weights.scope("ctx.params").child(chunk).child(phase.name());
    let x = Tensor::concat_channels(&[f_c, f_s, hyper])?;
    let agg0 = scope.child("agg0");
    let mut a = linear(&x, agg0.get("weight")?, Some(agg0.get("bias")?))?;
    activate_in_place(&mut a, Activation::Gelu);
    let agg1 = scope.child("agg1");
    let mut a = linear(&a, agg1.get("weight")?, Some(agg1.get("bias")?))?;
    activate_in_place(&mut a, Activation::Gelu);
    let attn = AttentionWeights::from_scope(&scope.child("attn"))?;
    let win = WindowConfig::new(cfg.window, cfg.agg_width, cfg.heads)?;
    let a = wla(&a, &attn, &win)?;
    let proj = scope.child("proj");
    let out = linear(&a, proj.get("weight")?, Some(proj.get("bias")?))?;
    let mu = out.narrow_channels(0, cw)?;
    let sigma = out
        .narrow_channels(cw, cw)?
        .map(|v| softplus(v as f64).max(SIGMA_MIN) as f32);
    Ok(EntropyParams { mu, sigma })
}

/// Parameters for one `(chunk, phase)` step of the decoding schedule.
///
/// `y_hat` holds the latent as decoded so far (undecoded entries may hold
/// anything; they are never read), `f_c` is the chunk's channel context.
pub fn step_params(
    y_hat: &Tensor,
    hyper: &Tensor,
    f_c: &Tensor,
    chunk: usize,
    phase: Phase,
    weights: &ModelWeights,
) -> Result<EntropyParams> {
    let cw = weights.config().chunk_width();
    let [n, _, h, w] = y_hat.shape();
    let masked = match phase {
        Phase::Anchor => Tensor::zeros([n, cw, h, w]),
        Phase::NonAnchor => checkerboard_split(&y_hat.narrow_channels(chunk * cw, cw)?).0,
    };
    let f_s = spatial_context(&masked, chunk, weights)?;
    estimate_params(f_c, &f_s, hyper, chunk, phase, weights)
}
