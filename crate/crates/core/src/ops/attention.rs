//! Spatial (per point) and channel (per feature) attention gates.
//!
//! Spatial: `S = sigmoid(conv1d([max_c F; mean_c F], f))`, one value per
//! point in the sorted sequence. Channel: `C = sigmoid(dense(mean_n F) +
//! dense(max_n F))` with one shared two-layer dense network.

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

use super::basic::{
    activation, activation_backward, col_pool, linear, linear_backward, row_pool, sigmoid, sum_rows,
};

/// Length of the 1-D kernel sliding over the sorted point sequence.
pub const SPATIAL_KERNEL: usize = 5;
const PAD: usize = SPATIAL_KERNEL / 2;

/// A length-5 kernel over the two pooled channels plus a scalar bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAttentionParams {
    /// `5 x 2`; column 0 reads the max channel, column 1 the mean.
    pub kernel: Tensor2D,
    /// `1 x 1`.
    pub bias: Tensor2D,
}

impl SpatialAttentionParams {
    pub fn zeros() -> Self {
        Self {
            kernel: Tensor2D::zeros(SPATIAL_KERNEL, 2),
            bias: Tensor2D::zeros(1, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// The shared dense pair `c -> c -> c` (ReLU between, linear output).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams {
    pub w1: Tensor2D,
    pub b1: Tensor2D,
    pub w2: Tensor2D,
    pub b2: Tensor2D,
}

impl ChannelAttentionParams {
    pub fn zeros(channels: usize) -> Self {
        Self {
            w1: Tensor2D::zeros(channels, channels),
            b1: Tensor2D::zeros(1, channels),
            w2: Tensor2D::zeros(channels, channels),
            b2: Tensor2D::zeros(1, channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.w1.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

/// Same-length 1-D cross-correlation with zero padding of 2 on each side:
/// `y[i] = b + sum_t sum_ch kernel[t][ch] * x[i + t - 2][ch]`.
pub fn conv1d(x: &Tensor2D, kernel: &Tensor2D, bias: &Tensor2D) -> Result<Tensor2D> {
    if kernel.rows() != SPATIAL_KERNEL || kernel.cols() != x.cols() || bias.shape() != (1, 1) {
        return Err(Error::Shape(format!(
            "conv1d: input {:?}, kernel {:?}, bias {:?}",
            x.shape(),
            kernel.shape(),
            bias.shape()
        )));
    }
    let n = x.rows();
    let b = bias.get(0, 0);
    let mut y = Tensor2D::zeros(n, 1);
    for i in 0..n {
        let mut acc = b;
        for t in 0..SPATIAL_KERNEL {
            let Some(src) = (i + t).checked_sub(PAD).filter(|&s| s < n) else {
                continue;
            };
            for (w, v) in kernel.row(t).iter().zip(x.row(src)) {
                acc += w * v;
            }
        }
        y.set(i, 0, acc);
    }
    Ok(y)
}

/// Returns `(d_x, d_kernel, d_bias)`.
pub fn conv1d_backward(
    upstream: &Tensor2D,
    x: &Tensor2D,
    kernel: &Tensor2D,
) -> (Tensor2D, Tensor2D, Tensor2D) {
    let n = x.rows();
    let mut dx = Tensor2D::zeros(n, x.cols());
    let mut dk = Tensor2D::zeros(kernel.rows(), kernel.cols());
    let mut db = 0.0;
    for i in 0..n {
        let g = upstream.get(i, 0);
        db += g;
        for t in 0..SPATIAL_KERNEL {
            let Some(src) = (i + t).checked_sub(PAD).filter(|&s| s < n) else {
                continue;
            };
            for ch in 0..x.cols() {
                dx.set(src, ch, dx.get(src, ch) + g * kernel.get(t, ch));
                dk.set(t, ch, dk.get(t, ch) + g * x.get(src, ch));
            }
        }
    }
    (dx, dk, Tensor2D::from_vec(1, 1, vec![db]).expect("1x1"))
}

/// Per-point attention values in `(0, 1)`, shape `n x 1`.
pub fn spatial_attention(f: &Tensor2D, params: &SpatialAttentionParams) -> Result<Tensor2D> {
    let (pooled, _) = row_pool(f)?;
    Ok(sigmoid(&conv1d(&pooled, &params.kernel, &params.bias)?))
}

/// The shared dense pair applied row-wise: `relu(x w1 + b1) w2 + b2`.
pub fn channel_dense(x: &Tensor2D, params: &ChannelAttentionParams) -> Result<Tensor2D> {
    let hidden = activation(&linear(x, &params.w1, &params.b1)?);
    linear(&hidden, &params.w2, &params.b2)
}

/// Gradients of [`channel_dense`]: `(d_x, d_params)`.
pub fn channel_dense_backward(
    upstream: &Tensor2D,
    x: &Tensor2D,
    params: &ChannelAttentionParams,
) -> Result<(Tensor2D, ChannelAttentionParams)> {
    let pre = linear(x, &params.w1, &params.b1)?;
    let hidden = activation(&pre);
    let (d_hidden, d_w2, d_b2) = linear_backward(upstream, &hidden, &params.w2);
    let d_pre = activation_backward(&d_hidden, &pre);
    let (dx, d_w1, d_b1) = linear_backward(&d_pre, x, &params.w1);
    Ok((
        dx,
        ChannelAttentionParams {
            w1: d_w1,
            b1: d_b1,
            w2: d_w2,
            b2: d_b2,
        },
    ))
}

/// Per-channel attention values in `(0, 1)`, shape `1 x c`.
pub fn channel_attention(f: &Tensor2D, params: &ChannelAttentionParams) -> Result<Tensor2D> {
    if params.channels() != f.cols() {
        return Err(Error::Shape(format!(
            "channel attention sized for {} channels applied to {}",
            params.channels(),
            f.cols()
        )));
    }
    let (pooled, _) = col_pool(f)?;
    let dense = channel_dense(&pooled, params)?;
    Ok(sigmoid(&sum_rows(&dense)))
}
