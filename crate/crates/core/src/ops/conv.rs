//! Pointwise atrous convolution over voxel-cell means.
//!
//! Every point in a cell sees the same 27 neighbor means, so the layer is
//! evaluated once per occupied cell (im2col + one GEMM) and broadcast back
//! to the member points.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{CellLayout, KernelWeights, NeighborTable, KERNEL_TAPS, NO_CELL};
use crate::tensor::{gemm, Tensor2D};

/// What the backward pass needs from a forward call.
#[derive(Debug)]
pub struct ConvContext {
    layout: Arc<CellLayout>,
    table: Arc<NeighborTable>,
    /// Gathered neighbor means, `cells x (27 * c_in)`.
    columns: Tensor2D,
    c_in: usize,
    c_out: usize,
}

impl ConvContext {
    pub fn stride(&self) -> usize {
        self.table.stride
    }
}

/// `out[p] = bias + sum_t mean(cell(p) + stride * offset_t) * W_t`, with
/// absent cells contributing zero.
pub fn atrous_conv_forward(
    features: &Tensor2D,
    layout: &Arc<CellLayout>,
    kernel: &KernelWeights,
    stride: usize,
) -> Result<(Tensor2D, ConvContext)> {
    conv_forward_raw(features, layout, &kernel.weights, &kernel.bias, stride)
}

/// Gradients with respect to the input features and the kernel.
pub fn atrous_conv_backward(
    upstream: &Tensor2D,
    kernel: &KernelWeights,
    ctx: &ConvContext,
) -> Result<(Tensor2D, KernelWeights)> {
    let (d_input, d_weights, d_bias) = conv_backward_raw(upstream, &kernel.weights, ctx)?;
    let grads = KernelWeights::from_parts(kernel.c_in(), kernel.c_out(), d_weights, d_bias)?;
    Ok((d_input, grads))
}

pub(crate) fn conv_forward_raw(
    features: &Tensor2D,
    layout: &Arc<CellLayout>,
    weights: &Tensor2D,
    bias: &Tensor2D,
    stride: usize,
) -> Result<(Tensor2D, ConvContext)> {
    let c_in = features.cols();
    let c_out = weights.cols();
    if weights.rows() != KERNEL_TAPS * c_in {
        return Err(Error::Shape(format!(
            "feature map has {c_in} channels but kernel expects {}",
            weights.rows() / KERNEL_TAPS
        )));
    }
    if bias.shape() != (1, c_out) {
        return Err(Error::Shape(format!(
            "bias is {:?}, expected 1x{c_out}",
            bias.shape()
        )));
    }
    if features.rows() != layout.num_points() {
        return Err(Error::Shape(format!(
            "feature map has {} rows but the grid holds {} points",
            features.rows(),
            layout.num_points()
        )));
    }
    let table = layout.neighbors(stride)?;
    let means = layout.cell_means(features);
    let m = layout.num_cells();

    let mut columns = Tensor2D::zeros(m, KERNEL_TAPS * c_in);
    for (r, taps) in table.taps.iter().enumerate() {
        let row = columns.row_mut(r);
        for (t, &nb) in taps.iter().enumerate() {
            if nb != NO_CELL {
                row[t * c_in..(t + 1) * c_in].copy_from_slice(means.row(nb as usize));
            }
        }
    }

    let mut per_cell = Tensor2D::zeros(m, c_out);
    for r in 0..m {
        per_cell.row_mut(r).copy_from_slice(bias.as_slice());
    }
    gemm(&columns, false, weights, false, 1.0, &mut per_cell);

    let mut out = Tensor2D::zeros(features.rows(), c_out);
    for p in 0..features.rows() {
        out.row_mut(p)
            .copy_from_slice(per_cell.row(layout.cell_of(p)));
    }
    Ok((
        out,
        ConvContext {
            layout: Arc::clone(layout),
            table,
            columns,
            c_in,
            c_out,
        },
    ))
}

pub(crate) fn conv_backward_raw(
    upstream: &Tensor2D,
    weights: &Tensor2D,
    ctx: &ConvContext,
) -> Result<(Tensor2D, Tensor2D, Tensor2D)> {
    let layout = &ctx.layout;
    let (c_in, c_out) = (ctx.c_in, ctx.c_out);
    if upstream.shape() != (layout.num_points(), c_out) {
        return Err(Error::Shape(format!(
            "upstream gradient is {:?}, expected {}x{c_out}",
            upstream.shape(),
            layout.num_points()
        )));
    }
    if weights.shape() != (KERNEL_TAPS * c_in, c_out) {
        return Err(Error::Shape(
            "kernel does not match the forward call".into(),
        ));
    }
    let m = layout.num_cells();

    let mut d_cell = Tensor2D::zeros(m, c_out);
    for cell in 0..m {
        let row = d_cell.row_mut(cell);
        for &p in layout.members(cell) {
            for (acc, g) in row.iter_mut().zip(upstream.row(p)) {
                *acc += g;
            }
        }
    }

    let mut d_weights = Tensor2D::zeros(KERNEL_TAPS * c_in, c_out);
    gemm(&ctx.columns, true, &d_cell, false, 0.0, &mut d_weights);

    let mut d_bias = Tensor2D::zeros(1, c_out);
    for r in d_cell.iter_rows() {
        for (acc, g) in d_bias.as_mut_slice().iter_mut().zip(r) {
            *acc += g;
        }
    }

    let mut d_columns = Tensor2D::zeros(m, KERNEL_TAPS * c_in);
    gemm(&d_cell, false, weights, true, 0.0, &mut d_columns);

    let mut d_means = Tensor2D::zeros(m, c_in);
    for (r, taps) in ctx.table.taps.iter().enumerate() {
        let src = d_columns.row(r);
        for (t, &nb) in taps.iter().enumerate() {
            if nb != NO_CELL {
                let dst = d_means.row_mut(nb as usize);
                for (acc, g) in dst.iter_mut().zip(&src[t * c_in..(t + 1) * c_in]) {
                    *acc += g;
                }
            }
        }
    }

    let mut d_input = Tensor2D::zeros(layout.num_points(), c_in);
    for cell in 0..m {
        let members = layout.members(cell);
        let inv = 1.0 / members.len() as f64;
        for &p in members {
            for (dst, g) in d_input.row_mut(p).iter_mut().zip(d_means.row(cell)) {
                *dst = g * inv;
            }
        }
    }
    Ok((d_input, d_weights, d_bias))
}
