//! Mini-batch SGD with classical momentum over blocks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::network::{argmax_rows, Network, PreparedBlock};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// In `[0, 1)`.
    pub momentum: f64,
    /// Blocks per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Multiply the learning rate by `lr_decay_factor` every this many
    /// epochs; 0 keeps it constant.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 4,
            epochs: 200,
            seed: 0,
            checkpoint_every: 0,
            lr_decay_every: 0,
            lr_decay_factor: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::Config("lr decay factor must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.lr_decay_every == 0 {
            return self.learning_rate;
        }
        let steps = (epoch.saturating_sub(1) / self.lr_decay_every) as i32;
        self.learning_rate * self.lr_decay_factor.powi(steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_oa: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub network: Network,
    /// One tensor per parameter, same shapes.
    pub velocity: Vec<Tensor2D>,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl TrainState {
    pub fn new(network: Network) -> Self {
        let velocity = network
            .parameters()
            .iter()
            .map(|t| Tensor2D::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            network,
            velocity,
            epoch: 0,
            history: Vec::new(),
        }
    }
}

/// `v <- momentum * v + g; p <- p - lr * v` for every parameter.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor2D],
    velocity: &mut [Tensor2D],
    grads: &[Tensor2D],
    learning_rate: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != velocity.len() || params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} velocities, {} gradients",
            params.len(),
            velocity.len(),
            grads.len()
        )));
    }
    for ((p, v), g) in params.iter().zip(velocity.iter()).zip(grads) {
        p.ensure_same_shape(v, "velocity")?;
        p.ensure_same_shape(g, "gradient")?;
    }
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        for ((pw, vw), gw) in p
            .as_mut_slice()
            .iter_mut()
            .zip(v.as_mut_slice())
            .zip(g.as_slice())
        {
            *vw = momentum * *vw + gw;
            *pw -= learning_rate * *vw;
        }
    }
    Ok(())
}

fn check_blocks(blocks: &[PointCloud]) -> Result<()> {
    for (b, block) in blocks.iter().enumerate() {
        if block.is_empty() {
            return Err(Error::InvalidInput(format!("block {b} is empty")));
        }
        if let Some(p) = block.labels().iter().position(Option::is_none) {
            return Err(Error::InvalidInput(format!(
                "block {b} point {p} is unlabeled"
            )));
        }
    }
    Ok(())
}

/// Trains `network` on `blocks`. See [`train_with`].
pub fn train(network: Network, blocks: &[PointCloud], cfg: &TrainConfig) -> Result<TrainState> {
    train_with(network, blocks, cfg, |_| Ok(()))
}

/// Trains and calls `on_epoch` after every epoch.
///
/// Blocks are shuffled per epoch from `cfg.seed`; per-block gradients are
/// computed in parallel but summed in batch order, so the result is a pure
/// function of the inputs.
pub fn train_with(
    network: Network,
    blocks: &[PointCloud],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if blocks.is_empty() {
        return Err(Error::InvalidInput("no training blocks".into()));
    }
    check_blocks(blocks)?;
    let prepared: Vec<PreparedBlock> = blocks
        .iter()
        .map(|b| network.prepare(b))
        .collect::<Result<_>>()?;
    let mut state = TrainState::new(network);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let (mut loss_sum, mut correct, mut total) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let net = &state.network;
            let results: Vec<_> = batch
                .par_iter()
                .map(|&b| net.loss_and_gradients(&prepared[b], scale))
                .collect::<Result<_>>()?;

            let mut summed: Option<Vec<Tensor2D>> = None;
            for (r, &b) in results.into_iter().zip(batch) {
                loss_sum += r.loss;
                let labels = &prepared[b].labels;
                correct += argmax_rows(&r.logits)
                    .iter()
                    .zip(labels)
                    .filter(|(p, l)| Some(**p) == **l)
                    .count();
                total += labels.len();
                match &mut summed {
                    None => summed = Some(r.grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&r.grads) {
                            a.add_assign(g)?;
                        }
                    }
                }
            }
            let grads = summed.expect("non-empty batch");
            let mut params = state.network.parameters_mut();
            sgd_momentum_step(&mut params, &mut state.velocity, &grads, lr, cfg.momentum)?;
        }
        state.epoch = epoch;
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / prepared.len() as f64,
            train_oa: correct as f64 / total as f64,
        };
        info!(
            "epoch {epoch}: loss {:.5}, train OA {:.4}",
            stats.mean_loss, stats.train_oa
        );
        state.history.push(stats);
        on_epoch(&state)?;
    }
    Ok(state)
}

/// Loss history as `epoch,mean_loss,train_oa` CSV text.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_loss,train_oa\n");
    for s in history {
        let _ = writeln!(out, "{},{:.10},{:.10}", s.epoch, s.mean_loss, s.train_oa);
    }
    out
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}
