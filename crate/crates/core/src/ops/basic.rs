//! Elementwise activations, dense layers, pooling reductions, broadcasts and
//! concatenation, each with its exact gradient.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor2D};

/// Elementwise `max(0, x)`.
pub fn activation(x: &Tensor2D) -> Tensor2D {
    x.map(|v| v.max(0.0))
}

/// Subgradient of ReLU: 1 where `x > 0`, 0 elsewhere (including `x == 0`).
pub fn activation_backward(upstream: &Tensor2D, input: &Tensor2D) -> Tensor2D {
    let mut d = upstream.clone();
    for (g, &x) in d.as_mut_slice().iter_mut().zip(input.as_slice()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    d
}

/// Logistic function, kept strictly inside `(0, 1)` even where `f64`
/// would round to an endpoint.
#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    let y = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn sigmoid(x: &Tensor2D) -> Tensor2D {
    x.map(sigmoid_scalar)
}

/// Uses the saved forward output `y`: `dy * y * (1 - y)`.
pub fn sigmoid_backward(upstream: &Tensor2D, output: &Tensor2D) -> Tensor2D {
    let mut d = upstream.clone();
    for (g, &y) in d.as_mut_slice().iter_mut().zip(output.as_slice()) {
        *g *= y * (1.0 - y);
    }
    d
}

/// `x * w + b` with `b` broadcast over rows.
pub fn linear(x: &Tensor2D, w: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if x.cols() != w.rows() || b.shape() != (1, w.cols()) {
        return Err(Error::Shape(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor2D::zeros(x.rows(), w.cols());
    for r in 0..x.rows() {
        out.row_mut(r).copy_from_slice(b.as_slice());
    }
    gemm(x, false, w, false, 1.0, &mut out);
    Ok(out)
}

/// Returns `(d_x, d_w, d_b)`.
pub fn linear_backward(
    upstream: &Tensor2D,
    x: &Tensor2D,
    w: &Tensor2D,
) -> (Tensor2D, Tensor2D, Tensor2D) {
    let mut dx = Tensor2D::zeros(x.rows(), x.cols());
    gemm(upstream, false, w, true, 0.0, &mut dx);
    let mut dw = Tensor2D::zeros(w.rows(), w.cols());
    gemm(x, true, upstream, false, 0.0, &mut dw);
    (dx, dw, column_sums(upstream))
}

pub fn column_sums(x: &Tensor2D) -> Tensor2D {
    let mut s = Tensor2D::zeros(1, x.cols());
    for r in x.iter_rows() {
        for (acc, v) in s.as_mut_slice().iter_mut().zip(r) {
            *acc += v;
        }
    }
    s
}

/// Per row, the max and the mean over channels: an `n x 2` map
/// `[max, mean]`, plus the argmax column of each row for the backward pass.
pub fn row_pool(x: &Tensor2D) -> Result<(Tensor2D, Vec<usize>)> {
    if x.cols() == 0 && x.rows() > 0 {
        return Err(Error::Shape("cannot pool a map with zero channels".into()));
    }
    let mut out = Tensor2D::zeros(x.rows(), 2);
    let mut argmax = Vec::with_capacity(x.rows());
    let inv = 1.0 / x.cols().max(1) as f64;
    for (r, row) in x.iter_rows().enumerate() {
        let (mut best, mut idx) = (row[0], 0);
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                idx = j;
            }
        }
        out.set(r, 0, best);
        out.set(r, 1, row.iter().sum::<f64>() * inv);
        argmax.push(idx);
    }
    Ok((out, argmax))
}

pub fn row_pool_backward(upstream: &Tensor2D, cols: usize, argmax: &[usize]) -> Tensor2D {
    let mut d = Tensor2D::zeros(upstream.rows(), cols);
    let inv = 1.0 / cols as f64;
    for (r, &j) in argmax.iter().enumerate() {
        let (g_max, g_avg) = (upstream.get(r, 0), upstream.get(r, 1));
        let row = d.row_mut(r);
        row.iter_mut().for_each(|v| *v = g_avg * inv);
        row[j] += g_max;
    }
    d
}

/// Per column, the mean and the max over points: a `2 x c` map whose first
/// row is the mean and second the max.
pub fn col_pool(x: &Tensor2D) -> Result<(Tensor2D, Vec<usize>)> {
    if x.rows() == 0 {
        return Err(Error::InvalidInput(
            "column pooling needs at least one point".into(),
        ));
    }
    let c = x.cols();
    let mut out = Tensor2D::zeros(2, c);
    let mut argmax = vec![0usize; c];
    out.row_mut(1).copy_from_slice(x.row(0));
    for (r, row) in x.iter_rows().enumerate() {
        for j in 0..c {
            let v = row[j];
            out.set(0, j, out.get(0, j) + v);
            if r > 0 && v > out.get(1, j) {
                out.set(1, j, v);
                argmax[j] = r;
            }
        }
    }
    let inv = 1.0 / x.rows() as f64;
    out.row_mut(0).iter_mut().for_each(|v| *v *= inv);
    Ok((out, argmax))
}

pub fn col_pool_backward(upstream: &Tensor2D, rows: usize, argmax: &[usize]) -> Tensor2D {
    let c = upstream.cols();
    let mut d = Tensor2D::zeros(rows, c);
    let inv = 1.0 / rows as f64;
    for r in 0..rows {
        d.row_mut(r).copy_from_slice(upstream.row(0));
        d.row_mut(r).iter_mut().for_each(|v| *v *= inv);
    }
    for (j, &r) in argmax.iter().enumerate() {
        d.set(r, j, d.get(r, j) + upstream.get(1, j));
    }
    d
}

/// Sum over rows: `n x c` to `1 x c`.
pub fn sum_rows(x: &Tensor2D) -> Tensor2D {
    column_sums(x)
}

pub fn sum_rows_backward(upstream: &Tensor2D, rows: usize) -> Tensor2D {
    let mut d = Tensor2D::zeros(rows, upstream.cols());
    for r in 0..rows {
        d.row_mut(r).copy_from_slice(upstream.row(0));
    }
    d
}

/// Multiplies every column of `x` by the per-row gate `s` (`n x 1`).
pub fn apply_spatial_attention(x: &Tensor2D, s: &Tensor2D) -> Result<Tensor2D> {
    if s.shape() != (x.rows(), 1) {
        return Err(Error::Shape(format!(
            "spatial gate is {:?}, feature map has {} rows",
            s.shape(),
            x.rows()
        )));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let g = s.get(r, 0);
        out.row_mut(r).iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}

/// Returns `(d_x, d_s)`.
pub fn apply_spatial_attention_backward(
    upstream: &Tensor2D,
    x: &Tensor2D,
    s: &Tensor2D,
) -> (Tensor2D, Tensor2D) {
    let mut dx = upstream.clone();
    let mut ds = Tensor2D::zeros(x.rows(), 1);
    for r in 0..x.rows() {
        let g = s.get(r, 0);
        dx.row_mut(r).iter_mut().for_each(|v| *v *= g);
        let dot: f64 = upstream
            .row(r)
            .iter()
            .zip(x.row(r))
            .map(|(a, b)| a * b)
            .sum();
        ds.set(r, 0, dot);
    }
    (dx, ds)
}

/// Multiplies every row of `x` by the per-channel gate `gate` (`1 x c`).
pub fn apply_channel_attention(x: &Tensor2D, gate: &Tensor2D) -> Result<Tensor2D> {
    if gate.shape() != (1, x.cols()) {
        return Err(Error::Shape(format!(
            "channel gate is {:?}, feature map has {} channels",
            gate.shape(),
            x.cols()
        )));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        for (v, g) in out.row_mut(r).iter_mut().zip(gate.as_slice()) {
            *v *= g;
        }
    }
    Ok(out)
}

/// Returns `(d_x, d_gate)`.
pub fn apply_channel_attention_backward(
    upstream: &Tensor2D,
    x: &Tensor2D,
    gate: &Tensor2D,
) -> (Tensor2D, Tensor2D) {
    let mut dx = upstream.clone();
    let mut dg = Tensor2D::zeros(1, x.cols());
    for r in 0..x.rows() {
        for (j, v) in dx.row_mut(r).iter_mut().enumerate() {
            *v *= gate.get(0, j);
        }
        for (j, acc) in dg.as_mut_slice().iter_mut().enumerate() {
            *acc += upstream.get(r, j) * x.get(r, j);
        }
    }
    (dx, dg)
}

/// Column-wise concatenation in argument order.
pub fn concat_channels(maps: &[&Tensor2D]) -> Result<Tensor2D> {
    let Some(first) = maps.first() else {
        return Err(Error::InvalidArgument("nothing to concatenate".into()));
    };
    let rows = first.rows();
    if let Some(bad) = maps.iter().find(|m| m.rows() != rows) {
        return Err(Error::Shape(format!(
            "cannot concatenate {} rows with {rows}",
            bad.rows()
        )));
    }
    let total: usize = maps.iter().map(|m| m.cols()).sum();
    let mut out = Tensor2D::zeros(rows, total);
    for r in 0..rows {
        let mut at = 0;
        let dst = out.row_mut(r);
        for m in maps {
            dst[at..at + m.cols()].copy_from_slice(m.row(r));
            at += m.cols();
        }
    }
    Ok(out)
}

/// Splits the upstream gradient back into per-input slices of `widths`.
pub fn concat_backward(upstream: &Tensor2D, widths: &[usize]) -> Vec<Tensor2D> {
    let mut at = 0;
    widths
        .iter()
        .map(|&w| {
            let part = upstream.slice_cols(at, at + w);
            at += w;
            part
        })
        .collect()
}
