//! The segmentation network: a cascade of atrous-conv blocks with spatial
//! attention and gently growing strides, parallel branches with
//! exponentially growing strides, a channel-attended concatenation, and a
//! pointwise classifier.

mod checkpoint;

use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    canonical_order, cell_coordinates, conv_param_count, CellLayout, KernelWeights, PointCloud,
    DEFAULT_CELL_SIZE,
};
use crate::ops::{ChannelAttentionParams, GradTape, SpatialAttentionParams, Var};
use crate::tensor::Tensor2D;

pub use checkpoint::CHECKPOINT_MAGIC;

/// Shape and initialization settings of a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub class_count: usize,
    /// Non-decreasing, starting at 1.
    pub cascade_strides: Vec<usize>,
    pub cascade_widths: Vec<usize>,
    /// Strictly increasing.
    pub parallel_strides: Vec<usize>,
    pub parallel_widths: Vec<usize>,
    pub cell_size: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 12,
            class_count: 13,
            cascade_strides: vec![1, 2, 3],
            cascade_widths: vec![32, 32, 64],
            parallel_strides: vec![2, 4, 8],
            parallel_widths: vec![64, 64, 64],
            cell_size: DEFAULT_CELL_SIZE,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 {
            return fail("in_channels must be positive".into());
        }
        if self.class_count == 0 {
            return fail("class_count must be positive".into());
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return fail(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            ));
        }
        if self.cascade_strides.first() != Some(&1) {
            return fail(format!(
                "cascade strides must start at 1, got {:?}",
                self.cascade_strides
            ));
        }
        if self.cascade_strides.windows(2).any(|w| w[1] < w[0]) {
            return fail(format!(
                "cascade strides must be non-decreasing, got {:?}",
                self.cascade_strides
            ));
        }
        if self.parallel_strides.is_empty() {
            return fail("at least one parallel branch is required".into());
        }
        if self.parallel_strides.contains(&0) {
            return fail("parallel strides must be positive".into());
        }
        if self.parallel_strides.windows(2).any(|w| w[1] <= w[0]) {
            return fail(format!(
                "parallel strides must be strictly increasing, got {:?}",
                self.parallel_strides
            ));
        }
        if self.cascade_widths.len() != self.cascade_strides.len() {
            return fail("one cascade width per cascade stride".into());
        }
        if self.parallel_widths.len() != self.parallel_strides.len() {
            return fail("one parallel width per parallel stride".into());
        }
        if self
            .cascade_widths
            .iter()
            .chain(&self.parallel_widths)
            .any(|&w| w == 0)
        {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Channels entering the channel-attention module.
    pub fn concat_width(&self) -> usize {
        self.parallel_widths.iter().sum()
    }

    /// Closed-form parameter count of the network this config builds.
    pub fn param_count(&self) -> usize {
        let spatial = SpatialAttentionParams::zeros().param_count();
        let mut total = 0;
        let mut c = self.in_channels;
        for &w in &self.cascade_widths {
            total += conv_param_count(c, w) + spatial;
            c = w;
        }
        for &w in &self.parallel_widths {
            total += conv_param_count(c, w) + spatial;
        }
        let cat = self.concat_width();
        total += 2 * (cat * cat + cat);
        total + conv_param_count(cat, self.class_count)
    }
}

/// One yellow block: atrous convolution, ReLU, spatial attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub stride: usize,
    pub kernel: KernelWeights,
    pub attention: SpatialAttentionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    pub cascade: Vec<ConvBlock>,
    pub parallel: Vec<ConvBlock>,
    pub channel_attention: ChannelAttentionParams,
    pub classifier: KernelWeights,
}

/// A block in canonical order with its cell layout, ready for repeated
/// forward passes.
#[derive(Debug, Clone)]
pub struct PreparedBlock {
    /// Sorted point `i` is input point `order[i]`.
    pub order: Vec<usize>,
    pub features: Tensor2D,
    pub labels: Vec<Option<usize>>,
    pub layout: Arc<CellLayout>,
}

impl PreparedBlock {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Rows of a sorted-order tensor put back into input order.
    pub fn unsort(&self, sorted: &Tensor2D) -> Tensor2D {
        let mut out = Tensor2D::zeros(sorted.rows(), sorted.cols());
        for (i, &src) in self.order.iter().enumerate() {
            out.row_mut(src).copy_from_slice(sorted.row(i));
        }
        out
    }
}

/// Result of one forward/backward pass over a block.
#[derive(Debug)]
pub struct BlockGradients {
    pub loss: f64,
    /// In parameter declaration order.
    pub grads: Vec<Tensor2D>,
    /// Logits in sorted order.
    pub logits: Tensor2D,
}

fn uniform_fill(t: &mut Tensor2D, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for w in t.as_mut_slice() {
        *w = dist.sample(rng);
    }
}

impl ConvBlock {
    fn init(stride: usize, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut kernel = KernelWeights::zeros(c_in, c_out);
        uniform_fill(&mut kernel.weights, 27 * c_in, c_out, rng);
        let mut attention = SpatialAttentionParams::zeros();
        uniform_fill(
            &mut attention.kernel,
            crate::ops::SPATIAL_KERNEL * 2,
            1,
            rng,
        );
        Self {
            stride,
            kernel,
            attention,
        }
    }

    fn params(&self) -> [&Tensor2D; 4] {
        [
            &self.kernel.weights,
            &self.kernel.bias,
            &self.attention.kernel,
            &self.attention.bias,
        ]
    }

    fn params_mut(&mut self) -> [&mut Tensor2D; 4] {
        [
            &mut self.kernel.weights,
            &mut self.kernel.bias,
            &mut self.attention.kernel,
            &mut self.attention.bias,
        ]
    }
}

/// Per-row argmax, ties resolved toward the smaller class id.
pub fn argmax_rows(logits: &Tensor2D) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl Network {
    /// Builds a network with weights drawn uniformly from
    /// `[-sqrt(6 / (fan_in + fan_out)), +sqrt(...)]` and zero biases.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut c = config.in_channels;
        let mut cascade = Vec::with_capacity(config.cascade_strides.len());
        for (&s, &w) in config.cascade_strides.iter().zip(&config.cascade_widths) {
            cascade.push(ConvBlock::init(s, c, w, &mut rng));
            c = w;
        }
        let parallel = config
            .parallel_strides
            .iter()
            .zip(&config.parallel_widths)
            .map(|(&s, &w)| ConvBlock::init(s, c, w, &mut rng))
            .collect();
        let cat = config.concat_width();
        let mut channel_attention = ChannelAttentionParams::zeros(cat);
        uniform_fill(&mut channel_attention.w1, cat, cat, &mut rng);
        uniform_fill(&mut channel_attention.w2, cat, cat, &mut rng);
        let mut classifier = KernelWeights::zeros(cat, config.class_count);
        uniform_fill(
            &mut classifier.weights,
            27 * cat,
            config.class_count,
            &mut rng,
        );
        Ok(Self {
            config,
            cascade,
            parallel,
            channel_attention,
            classifier,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// All trainable tensors in declaration order.
    pub fn parameters(&self) -> Vec<&Tensor2D> {
        let mut out = Vec::new();
        for b in self.cascade.iter().chain(&self.parallel) {
            out.extend(b.params());
        }
        let ca = &self.channel_attention;
        out.extend([&ca.w1, &ca.b1, &ca.w2, &ca.b2]);
        out.extend([&self.classifier.weights, &self.classifier.bias]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut out = Vec::new();
        for b in self.cascade.iter_mut().chain(self.parallel.iter_mut()) {
            out.extend(b.params_mut());
        }
        let ca = &mut self.channel_attention;
        out.extend([&mut ca.w1, &mut ca.b1, &mut ca.w2, &mut ca.b2]);
        out.extend([&mut self.classifier.weights, &mut self.classifier.bias]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Sorts `block` canonically and bins it into cells.
    pub fn prepare(&self, block: &PointCloud) -> Result<PreparedBlock> {
        if block.channels() != self.config.in_channels && !block.is_empty() {
            return Err(Error::Shape(format!(
                "block has {} channels, network expects {}",
                block.channels(),
                self.config.in_channels
            )));
        }
        let order = canonical_order(block.positions(), self.config.cell_size)?;
        let sorted = block.permuted(&order);
        let (_, cells) = cell_coordinates(sorted.positions(), self.config.cell_size)?;
        let layout = Arc::new(CellLayout::from_point_cells(&cells));
        Ok(PreparedBlock {
            order,
            features: sorted.features().clone(),
            labels: sorted.labels().to_vec(),
            layout,
        })
    }

    fn block_forward(
        tape: &mut GradTape,
        block: &ConvBlock,
        params: &[Var],
        input: Var,
        layout: &Arc<CellLayout>,
    ) -> Result<Var> {
        let conv = tape.atrous_conv(input, params[0], params[1], layout, block.stride)?;
        let act = tape.relu(conv);
        tape.spatial_attention(act, params[2], params[3])
    }

    /// Records the forward pass on `tape`. Returns the logits (sorted order)
    /// and the leaf variables of every parameter in declaration order.
    pub fn forward_on_tape(
        &self,
        tape: &mut GradTape,
        block: &PreparedBlock,
    ) -> Result<(Var, Vec<Var>)> {
        if block.is_empty() {
            return Err(Error::InvalidInput(
                "cannot run the network on an empty block".into(),
            ));
        }
        let params: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        let layout = &block.layout;
        let mut x = tape.leaf(block.features.clone());
        let mut at = 0;
        for b in &self.cascade {
            x = Self::block_forward(tape, b, &params[at..at + 4], x, layout)?;
            at += 4;
        }
        let mut branches = Vec::with_capacity(self.parallel.len());
        for b in &self.parallel {
            branches.push(Self::block_forward(
                tape,
                b,
                &params[at..at + 4],
                x,
                layout,
            )?);
            at += 4;
        }
        let cat = tape.concat(&branches)?;
        let gated = tape.channel_attention(
            cat,
            params[at],
            params[at + 1],
            params[at + 2],
            params[at + 3],
        )?;
        at += 4;
        let logits = tape.atrous_conv(gated, params[at], params[at + 1], layout, 1)?;
        Ok((logits, params))
    }

    /// Per-point class logits, rows in the input order of `block`.
    pub fn forward(&self, block: &PointCloud) -> Result<Tensor2D> {
        let prepared = self.prepare(block)?;
        let sorted = self.forward_prepared(&prepared)?;
        Ok(prepared.unsort(&sorted))
    }

    /// Logits in the sorted order of `block`.
    pub fn forward_prepared(&self, block: &PreparedBlock) -> Result<Tensor2D> {
        let mut tape = GradTape::new();
        let (logits, _) = self.forward_on_tape(&mut tape, block)?;
        Ok(tape.value(logits).clone())
    }

    /// Argmax class per point, in input order.
    pub fn predict(&self, block: &PointCloud) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(block)?))
    }

    /// Mean cross-entropy over the block and its parameter gradients,
    /// scaled by `seed`.
    pub fn loss_and_gradients(&self, block: &PreparedBlock, seed: f64) -> Result<BlockGradients> {
        let labels: Vec<usize> = block
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| {
                    Error::InvalidInput(format!("point {} is unlabeled", block.order[i]))
                })
            })
            .collect::<Result<_>>()?;
        let mut tape = GradTape::new();
        let (logits, params) = self.forward_on_tape(&mut tape, block)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        let mut grads = tape.backward(loss, seed)?;
        let param_grads = params
            .iter()
            .map(|&v| {
                let like = tape.value(v);
                grads.take_or_zeros(v, like)
            })
            .collect();
        Ok(BlockGradients {
            loss: tape.value(loss).get(0, 0),
            grads: param_grads,
            logits: tape.value(logits).clone(),
        })
    }
}
