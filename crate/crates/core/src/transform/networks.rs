use super::{ModelWeights, MAIN_STRIDE, TOTAL_STRIDE};
use crate::error::{Error, Result};
use crate::params::ParamScope;
use crate::ssm::{vss_block, VssWeights};
use crate::tensor::{activate_in_place, conv2d, conv_transpose2d, Activation, ConvSpec, Tensor};

pub(crate) fn conv(x: &Tensor, scope: &ParamScope<'_>, stride: usize) -> Result<Tensor> {
    let w = scope.get("weight")?;
    let [cout, cin, k, _] = w.shape();
    let spec = ConvSpec::new(cin, cout, k, stride, k / 2);
    conv2d(x, w, Some(scope.get("bias")?), &spec)
}

/// Stride-2 transposed convolution that exactly doubles both extents.
fn deconv(x: &Tensor, scope: &ParamScope<'_>) -> Result<Tensor> {
    let w = scope.get("weight")?;
    let [cin, cout, k, _] = w.shape();
    let spec = ConvSpec::transposed(cin, cout, k, 2, k / 2, 1);
    conv_transpose2d(x, w, Some(scope.get("bias")?), &spec)
}

pub(crate) fn vss(x: &Tensor, scope: &ParamScope<'_>) -> Result<Tensor> {
    vss_block(x, &VssWeights::from_scope(scope)?)
}

/// `x + conv1x1(act(conv3x3(act(conv1x1(x)))))` with a halved middle width.
pub fn residual_bottleneck(x: &Tensor, scope: &ParamScope<'_>) -> Result<Tensor> {
    let mut h = conv(x, &scope.child("conv1"), 1)?;
    activate_in_place(&mut h, Activation::Gelu);
    let mut h = conv(&h, &scope.child("conv2"), 1)?;
    activate_in_place(&mut h, Activation::Gelu);
    let h = conv(&h, &scope.child("conv3"), 1)?;
    x.add(&h)
}

/// Image `(1, 3, H, W)` in `[0, 1]` to latent `(1, M, H/16, W/16)`.
pub fn analyze(x: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let [_, c, h, w] = x.shape();
    if c != 3 {
        return Err(Error::shape("analyze", format!("expected 3 channels, got {c}")));
    }
    if h == 0 || w == 0 || h % TOTAL_STRIDE != 0 || w % TOTAL_STRIDE != 0 {
        return Err(Error::shape(
            "analyze",
            format!("{h}x{w} is not a multiple of {TOTAL_STRIDE}; pad the image first"),
        ));
    }
    let root = weights.scope("g_a");
    let mut y = x.clone();
    for i in 0..4 {
        let stage = root.child(i);
        y = conv(&y, &stage.child("conv"), 2)?;
        y = vss(&y, &stage.child("vss"))?;
    }
    residual_bottleneck(&y, &root.child("rb"))
}

/// Latent `(1, M, h, w)` to image `(1, 3, 16h, 16w)` clamped to `[0, 1]`.
pub fn synthesize(y_hat: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let m = weights.config().m;
    if y_hat.channels() != m {
        return Err(Error::shape(
            "synthesize",
            format!("expected {m} latent channels, got {}", y_hat.channels()),
        ));
    }
    let root = weights.scope("g_s");
    let mut x = residual_bottleneck(y_hat, &root.child("rb"))?;
    for j in 0..4 {
        let stage = root.child(j);
        x = vss(&x, &stage.child("vss"))?;
        x = deconv(&x, &stage.child("deconv"))?;
    }
    debug_assert_eq!(x.height(), y_hat.height() * MAIN_STRIDE);
    Ok(x.map(|v| v.clamp(0.0, 1.0)))
}

/// Latent to hyper latent `(1, N, h/4, w/4)`.
pub fn hyper_analyze(y: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let [_, c, h, w] = y.shape();
    let m = weights.config().m;
    if c != m || h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::shape(
            "hyper_analyze",
            format!("expected ({m}, 4h, 4w) latent, got {:?}", y.shape()),
        ));
    }
    let root = weights.scope("h_a");
    let z = conv(y, &root.child("conv0"), 2)?;
    let z = vss(&z, &root.child("vss"))?;
    conv(&z, &root.child("conv1"), 2)
}

/// Hyper latent to the `2M`-channel hyper features at latent resolution.
pub fn hyper_synthesize(z_hat: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let n = weights.config().n;
    if z_hat.channels() != n {
        return Err(Error::shape(
            "hyper_synthesize",
            format!("expected {n} channels, got {}", z_hat.channels()),
        ));
    }
    let root = weights.scope("h_s");
    let f = deconv(z_hat, &root.child("deconv0"))?;
    let f = vss(&f, &root.child("vss"))?;
    deconv(&f, &root.child("deconv1"))
}
