//! Differentiable operations over [`Tensor`](crate::Tensor).

mod activation;
mod arith;
mod conv;
mod layout;
mod loss;
mod norm;

pub use activation::{prelu, sigmoid};
pub use arith::{add, mul, scale, sub, sum};
pub use conv::{conv2d, depthwise_separable_conv};
pub use layout::{bilinear_upsample, concat_channels, deinterleave, hadamard_mask, interleave_concat};
pub use loss::{bce_loss, bce_plus_iou_loss, mse_loss, soft_iou_loss, LossKind, BCE_CLAMP};
pub use norm::{instance_norm, INSTANCE_NORM_EPS};
