//! Application of a single candidate operation to an edge input.

use crate::error::Result;
use crate::space::{Activation, OpKind};
use crate::tensor::{Graph, InterpMode, PoolKind, Scalar, Var};

pub(crate) fn activate<T: Scalar>(g: &mut Graph<T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => g.relu(x),
        Activation::LeakyRelu => g.leaky_relu(x, Activation::LEAKY_SLOPE),
        Activation::Linear => x,
    }
}

/// Weight shape and fan-in of an op acting on `channels` feature maps.
pub(crate) fn weight_shape(op: OpKind, channels: usize) -> Option<(Vec<usize>, usize)> {
    if let Some(cs) = op.conv_shape() {
        return Some((vec![channels, channels, cs.k, cs.k], channels * cs.k * cs.k));
    }
    (op == OpKind::TransposedConv3x3).then(|| (vec![channels, channels, 3, 3], channels * 9))
}

/// `activated` is the activated edge input, used by weighted ops only.
/// Returns `None` for [`OpKind::None`].
pub(crate) fn apply<T: Scalar>(
    g: &mut Graph<T>,
    op: OpKind,
    x: Var,
    activated: Var,
    weight: Option<Var>,
    scale: usize,
) -> Result<Option<Var>> {
    let w = || weight.expect("weighted op bound without its weight");
    let out = match op {
        OpKind::None => return Ok(None),
        OpKind::Identity => x,
        OpKind::TransposedConv3x3 => g.transposed_conv2d(activated, w(), scale)?,
        OpKind::NearestUp => g.interpolate(x, scale, InterpMode::Nearest)?,
        OpKind::BilinearUp => g.interpolate(x, scale, InterpMode::Bilinear)?,
        OpKind::AvgPool => g.pool2d(x, PoolKind::Avg)?,
        OpKind::MaxPool => g.pool2d(x, PoolKind::Max)?,
        conv => {
            let cs = conv.conv_shape().expect("remaining kinds are convolutions");
            g.conv2d(activated, w(), cs.stride, cs.dilation, cs.padding())?
        }
    };
    Ok(Some(out))
}
