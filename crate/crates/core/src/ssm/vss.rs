use super::{ss2d, SsmWeights};
use crate::error::{Error, Result};
use crate::params::ParamScope;
use crate::tensor::{
    activate_in_place, depthwise_conv2d, layer_norm, linear, Activation, ConvSpec, Tensor,
};

pub const LAYER_NORM_EPS: f64 = 1e-6;
pub const DW_KERNEL: usize = 3;

/// Borrowed parameters of one visual state-space block.
#[derive(Clone, Debug)]
pub struct VssWeights<'a> {
    pub norm_gain: &'a Tensor,
    pub norm_bias: &'a Tensor,
    pub in_x_w: &'a Tensor,
    pub in_x_b: &'a Tensor,
    pub in_z_w: &'a Tensor,
    pub in_z_b: &'a Tensor,
    pub dw_w: &'a Tensor,
    pub dw_b: &'a Tensor,
    pub paths: [SsmWeights<'a>; 4],
    pub out_norm_gain: &'a Tensor,
    pub out_norm_bias: &'a Tensor,
    pub out_w: &'a Tensor,
    pub out_b: &'a Tensor,
}

impl<'a> VssWeights<'a> {
    pub fn from_scope(scope: &ParamScope<'a>) -> Result<Self> {
        let path = |i: usize| SsmWeights::from_scope(&scope.child(format!("ss2d.path{i}")));
        Ok(VssWeights {
            norm_gain: scope.get("norm.gain")?,
            norm_bias: scope.get("norm.bias")?,
            in_x_w: scope.get("in_x.weight")?,
            in_x_b: scope.get("in_x.bias")?,
            in_z_w: scope.get("in_z.weight")?,
            in_z_b: scope.get("in_z.bias")?,
            dw_w: scope.get("dwconv.weight")?,
            dw_b: scope.get("dwconv.bias")?,
            paths: [path(0)?, path(1)?, path(2)?, path(3)?],
            out_norm_gain: scope.get("out_norm.gain")?,
            out_norm_bias: scope.get("out_norm.bias")?,
            out_w: scope.get("out.weight")?,
            out_b: scope.get("out.bias")?,
        })
    }

    /// Width of the scan branch.
    pub fn inner_dim(&self) -> usize {
        self.in_x_w.shape()[0]
    }
}

/// `x + out(LN(ss2d(silu(dw(in_x(LN(x)))))) * silu(in_z(LN(x))))`.
pub fn vss_block(x: &Tensor, w: &VssWeights<'_>) -> Result<Tensor> {
    let c = x.channels();
    if w.in_x_w.shape()[1] != c || w.out_w.shape()[0] != c {
        return Err(Error::shape(
            "vss_block",
            format!(
                "block maps {} -> {} channels, input has {c}",
                w.in_x_w.shape()[1],
                w.out_w.shape()[0]
            ),
        ));
    }
    let normed = layer_norm(x, w.norm_gain, w.norm_bias, LAYER_NORM_EPS)?;

    let mut u = linear(&normed, w.in_x_w, Some(w.in_x_b))?;
    u = depthwise_conv2d(&u, w.dw_w, Some(w.dw_b), &ConvSpec::depthwise(u.channels(), DW_KERNEL))?;
    activate_in_place(&mut u, Activation::Silu);
    let scanned = ss2d(&u, &w.paths)?;
    let scanned = layer_norm(&scanned, w.out_norm_gain, w.out_norm_bias, LAYER_NORM_EPS)?;

    let mut gate = linear(&normed, w.in_z_w, Some(w.in_z_b))?;
    activate_in_place(&mut gate, Activation::Silu);

    let mixed = scanned.mul(&gate)?;
    let f = linear(&mixed, w.out_w, Some(w.out_b))?;
    x.add(&f)
}
