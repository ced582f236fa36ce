//! Reverse-mode differentiation over a linear record of executed ops.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::CellLayout;
use crate::tensor::Tensor2D;

use super::attention::{conv1d, conv1d_backward};
use super::basic::{
    activation, activation_backward, apply_channel_attention, apply_channel_attention_backward,
    apply_spatial_attention, apply_spatial_attention_backward, col_pool, col_pool_backward,
    concat_backward, concat_channels, linear, linear_backward, row_pool, row_pool_backward,
    sigmoid, sigmoid_backward, sum_rows, sum_rows_backward,
};
use super::conv::{conv_backward_raw, conv_forward_raw, ConvContext};
use super::loss::softmax_cross_entropy;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    AtrousConv {
        input: Var,
        weights: Var,
        bias: Var,
        ctx: ConvContext,
    },
    Relu(Var),
    Sigmoid(Var),
    Linear {
        input: Var,
        weights: Var,
        bias: Var,
    },
    RowPool {
        input: Var,
        argmax: Vec<usize>,
    },
    ColPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    SumRows(Var),
    ScaleRows {
        input: Var,
        gate: Var,
    },
    ScaleCols {
        input: Var,
        gate: Var,
    },
    Concat(Vec<Var>),
    SoftmaxCrossEntropy {
        logits: Var,
        dlogits: Tensor2D,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::AtrousConv { .. } => "atrous_conv",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Linear { .. } => "linear",
            Op::RowPool { .. } => "row_pool",
            Op::ColPool { .. } => "col_pool",
            Op::Conv1d { .. } => "conv1d",
            Op::SumRows(_) => "sum_rows",
            Op::ScaleRows { .. } => "scale_rows",
            Op::ScaleCols { .. } => "scale_cols",
            Op::Concat(_) => "concat",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor2D,
    op: Op,
}

/// Records forward values and the context needed to replay gradients.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2D>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2D> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The gradient of `v`, or zeros shaped like `like` when nothing flowed
    /// into it.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor2D) -> Tensor2D {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor2D::zeros(like.rows(), like.cols()))
    }

    /// Non-leaf nodes in the order their backward rules ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    /// Names of the recorded ops, in forward order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn push(&mut self, value: Tensor2D, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor2D) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn atrous_conv(
        &mut self,
        input: Var,
        weights: Var,
        bias: Var,
        layout: &Arc<CellLayout>,
        stride: usize,
    ) -> Result<Var> {
        let (out, ctx) = conv_forward_raw(
            self.value(input),
            layout,
            self.value(weights),
            self.value(bias),
            stride,
        )?;
        Ok(self.push(
            out,
            Op::AtrousConv {
                input,
                weights,
                bias,
                ctx,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = activation(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn linear(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = linear(self.value(input), self.value(weights), self.value(bias))?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weights,
                bias,
            },
        ))
    }

    pub fn row_pool(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = row_pool(self.value(input))?;
        Ok(self.push(out, Op::RowPool { input, argmax }))
    }

    pub fn col_pool(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = col_pool(self.value(input))?;
        Ok(self.push(out, Op::ColPool { input, argmax }))
    }

    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = conv1d(self.value(input), self.value(kernel), self.value(bias))?;
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                kernel,
                bias,
            },
        ))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let out = sum_rows(self.value(x));
        self.push(out, Op::SumRows(x))
    }

    pub fn scale_rows(&mut self, input: Var, gate: Var) -> Result<Var> {
        let out = apply_spatial_attention(self.value(input), self.value(gate))?;
        Ok(self.push(out, Op::ScaleRows { input, gate }))
    }

    pub fn scale_cols(&mut self, input: Var, gate: Var) -> Result<Var> {
        let out = apply_channel_attention(self.value(input), self.value(gate))?;
        Ok(self.push(out, Op::ScaleCols { input, gate }))
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let maps: Vec<&Tensor2D> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = concat_channels(&maps)?;
        Ok(self.push(out, Op::Concat(inputs.to_vec())))
    }

    /// Scalar (`1 x 1`) mean cross-entropy.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, dlogits) = softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor2D::filled(1, 1, loss),
            Op::SoftmaxCrossEntropy { logits, dlogits },
        ))
    }

    /// Spatial attention computed from `input` and multiplied into it.
    pub fn spatial_attention(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let pooled = self.row_pool(input)?;
        let scores = self.conv1d(pooled, kernel, bias)?;
        let gate = self.sigmoid(scores);
        self.scale_rows(input, gate)
    }

    /// Channel attention computed from `input` and multiplied into it.
    pub fn channel_attention(
        &mut self,
        input: Var,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
    ) -> Result<Var> {
        let pooled = self.col_pool(input)?;
        let hidden = self.linear(pooled, w1, b1)?;
        let hidden = self.relu(hidden);
        let dense = self.linear(hidden, w2, b2)?;
        let summed = self.sum_rows(dense);
        let gate = self.sigmoid(summed);
        self.scale_cols(input, gate)
    }

    /// Backpropagates from a scalar `loss`, seeding its gradient with `seed`.
    pub fn backward(&self, loss: Var, seed: f64) -> Result<Gradients> {
        self.check_var(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with(loss, Tensor2D::filled(1, 1, seed))
    }

    /// Backpropagates an arbitrary upstream gradient from `output`.
    pub fn backward_with(&self, output: Var, upstream: Tensor2D) -> Result<Gradients> {
        self.check_var(output)?;
        let value = self.value(output);
        if upstream.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "upstream {:?} for a {:?} output",
                upstream.shape(),
                value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor2D>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(upstream);
        let mut visited = Vec::new();

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            let mut contributions: Vec<(Var, Tensor2D)> = Vec::with_capacity(3);
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::AtrousConv {
                    input,
                    weights,
                    bias,
                    ctx,
                } => {
                    let (dx, dw, db) = conv_backward_raw(&g, self.value(*weights), ctx)?;
                    contributions.push((*input, dx));
                    contributions.push((*weights, dw));
                    contributions.push((*bias, db));
                }
                Op::Relu(x) => {
                    contributions.push((*x, activation_backward(&g, self.value(*x))));
                }
                Op::Sigmoid(x) => {
                    contributions.push((*x, sigmoid_backward(&g, &node.value)));
                }
                Op::Linear {
                    input,
                    weights,
                    bias,
                } => {
                    let (dx, dw, db) =
                        linear_backward(&g, self.value(*input), self.value(*weights));
                    contributions.push((*input, dx));
                    contributions.push((*weights, dw));
                    contributions.push((*bias, db));
                }
                Op::RowPool { input, argmax } => {
                    let cols = self.value(*input).cols();
                    contributions.push((*input, row_pool_backward(&g, cols, argmax)));
                }
                Op::ColPool { input, argmax } => {
                    let rows = self.value(*input).rows();
                    contributions.push((*input, col_pool_backward(&g, rows, argmax)));
                }
                Op::Conv1d {
                    input,
                    kernel,
                    bias,
                } => {
                    let (dx, dk, db) = conv1d_backward(&g, self.value(*input), self.value(*kernel));
                    contributions.push((*input, dx));
                    contributions.push((*kernel, dk));
                    contributions.push((*bias, db));
                }
                Op::SumRows(x) => {
                    let rows = self.value(*x).rows();
                    contributions.push((*x, sum_rows_backward(&g, rows)));
                }
                Op::ScaleRows { input, gate } => {
                    let (dx, dg) =
                        apply_spatial_attention_backward(&g, self.value(*input), self.value(*gate));
                    contributions.push((*input, dx));
                    contributions.push((*gate, dg));
                }
                Op::ScaleCols { input, gate } => {
                    let (dx, dg) =
                        apply_channel_attention_backward(&g, self.value(*input), self.value(*gate));
                    contributions.push((*input, dx));
                    contributions.push((*gate, dg));
                }
                Op::Concat(inputs) => {
                    let widths: Vec<usize> = inputs.iter().map(|&v| self.value(v).cols()).collect();
                    for (v, d) in inputs.iter().zip(concat_backward(&g, &widths)) {
                        contributions.push((*v, d));
                    }
                }
                Op::SoftmaxCrossEntropy { logits, dlogits } => {
                    let mut d = dlogits.clone();
                    d.scale(g.get(0, 0));
                    contributions.push((*logits, d));
                }
            }
            for (v, d) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&d)?,
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called before any forward pass".into(),
            ));
        }
        if v.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "variable {} is not on this tape",
                v.0
            )));
        }
        Ok(())
    }
}
