//! Differentiable building blocks. Each op has a plain forward function, an
//! exact backward function, and a recording method on [`GradTape`].

pub mod attention;
pub mod basic;
pub mod conv;
pub mod loss;
pub mod tape;

pub use attention::{
    channel_attention, channel_dense, channel_dense_backward, conv1d, conv1d_backward,
    spatial_attention, ChannelAttentionParams, SpatialAttentionParams, SPATIAL_KERNEL,
};
pub use basic::{
    activation, activation_backward, apply_channel_attention, apply_spatial_attention,
    concat_channels, sigmoid,
};
pub use conv::{atrous_conv_backward, atrous_conv_forward, ConvContext};
pub use loss::{softmax, softmax_cross_entropy};
pub use tape::{GradTape, Gradients, Var};
