//! Tiling rooms into fixed-size blocks and assembling per-point channels.
//!
//! Channels: block-relative `x y z`, `r g b / 255`, room-normalized `x y z`,
//! then optionally the oriented normal.

use std::collections::BTreeMap;

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RoomCloud;
use crate::error::{Error, Result};
use crate::geometry::{canonical_order, PointCloud};
use crate::normals::estimate_normals;
use crate::tensor::Tensor2D;

pub const DEFAULT_BLOCK_SIZE: f64 = 1.0;
pub const DEFAULT_POINTS_PER_BLOCK: usize = 4096;
/// Tiles with fewer points are dropped when sampling training blocks.
pub const MIN_BLOCK_POINTS: usize = 64;

const BASE_CHANNELS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    /// Edge of the square floor-plan tile, meters.
    pub block_size: f64,
    pub points_per_block: usize,
    pub min_points: usize,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            points_per_block: DEFAULT_POINTS_PER_BLOCK,
            min_points: MIN_BLOCK_POINTS,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.block_size > 0.0 && self.block_size.is_finite()) {
            return Err(Error::Config(format!(
                "block size must be positive, got {}",
                self.block_size
            )));
        }
        if self.points_per_block == 0 {
            return Err(Error::Config("points per block must be positive".into()));
        }
        Ok(())
    }
}

/// A block of points with its channels; positions are block-relative.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub cloud: PointCloud,
    /// Room index of every block point (repeats for up-sampled points).
    pub source: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.cloud.channels()
    }
}

/// Point indices per floor-plan tile, tiles in ascending `(tx, ty)` order.
fn tiles(room: &RoomCloud, block_size: f64) -> BTreeMap<(i64, i64), Vec<usize>> {
    let (lo, _) = room.bounds();
    let mut out: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in room.positions.iter().enumerate() {
        let tx = ((p[0] - lo[0]) / block_size).floor() as i64;
        let ty = ((p[1] - lo[1]) / block_size).floor() as i64;
        out.entry((tx, ty)).or_default().push(i);
    }
    out
}

fn assemble(room: &RoomCloud, tile_members: &[usize], picks: Vec<usize>) -> Result<Block> {
    let (room_lo, room_hi) = room.bounds();
    let mut block_lo = [f64::INFINITY; 3];
    for &i in tile_members {
        for (lo, v) in block_lo.iter_mut().zip(room.positions[i]) {
            *lo = lo.min(v);
        }
    }
    let mut positions = Vec::with_capacity(picks.len());
    let mut feats = Vec::with_capacity(picks.len() * BASE_CHANNELS);
    let mut labels = Vec::with_capacity(picks.len());
    for &i in &picks {
        let p = room.positions[i];
        let rel = [p[0] - block_lo[0], p[1] - block_lo[1], p[2] - block_lo[2]];
        positions.push(rel);
        feats.extend_from_slice(&rel);
        feats.extend(room.colors[i].iter().map(|&c| c as f64 / 255.0));
        for a in 0..3 {
            let extent = room_hi[a] - room_lo[a];
            feats.push(if extent > 0.0 {
                ((p[a] - room_lo[a]) / extent).clamp(0.0, 1.0)
            } else {
                0.0
            });
        }
        labels.push(room.labels[i]);
    }
    let features = Tensor2D::from_vec(picks.len(), BASE_CHANNELS, feats)?;
    Ok(Block {
        cloud: PointCloud::new(positions, features, labels)?,
        source: picks,
    })
}

/// Tiles the floor plan into `block_size` squares (full height) and samples
/// each tile to exactly `points_per_block` points: without replacement when
/// the tile has more, all points plus replacement draws when it has fewer.
/// Tiles below `min_points` are discarded.
pub fn partition_blocks(room: &RoomCloud, cfg: &PartitionConfig) -> Result<Vec<Block>> {
    cfg.validate()?;
    if room.is_empty() {
        return Err(Error::InvalidInput("cannot partition an empty room".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.points_per_block;
    let mut blocks = Vec::new();
    for members in tiles(room, cfg.block_size).values() {
        if members.len() < cfg.min_points {
            continue;
        }
        let picks: Vec<usize> = if members.len() >= n {
            let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), n).into_vec();
            chosen.sort_unstable();
            chosen.into_iter().map(|k| members[k]).collect()
        } else {
            let mut all = members.clone();
            all.extend((members.len()..n).map(|_| members[rng.random_range(0..members.len())]));
            all
        };
        blocks.push(assemble(room, members, picks)?);
    }
    Ok(blocks)
}

/// Every point of the room exactly once, grouped by tile, no sampling and no
/// discarding. Used for inference so each point gets a prediction.
pub fn tile_room(room: &RoomCloud, block_size: f64) -> Result<Vec<Block>> {
    if !(block_size > 0.0 && block_size.is_finite()) {
        return Err(Error::Config(format!(
            "block size must be positive, got {block_size}"
        )));
    }
    tiles(room, block_size)
        .values()
        .map(|members| assemble(room, members, members.clone()))
        .collect()
}

/// Normals carried by the room file, or estimated on the whole room.
pub fn room_normals(room: &RoomCloud, k: usize, center: [f64; 3]) -> Result<Vec<[f64; 3]>> {
    if let Some(n) = &room.normals {
        return Ok(n.clone());
    }
    let est = estimate_normals(&room.positions, k, center)?;
    if est.fallbacks > 0 {
        warn!(
            "{} of {} points had degenerate neighborhoods and got the fallback normal",
            est.fallbacks,
            room.len()
        );
    }
    Ok(est.normals)
}

/// Appends the room-level normal of each block point as channels 10-12.
pub fn attach_normals(
    blocks: Vec<Block>,
    room: &RoomCloud,
    k: usize,
    center: [f64; 3],
) -> Result<Vec<Block>> {
    let normals = room_normals(room, k, center)?;
    blocks
        .into_iter()
        .map(|b| {
            if b.channels() != BASE_CHANNELS {
                return Err(Error::Shape(format!(
                    "normals go on {BASE_CHANNELS}-channel blocks, got {}",
                    b.channels()
                )));
            }
            let old = b.cloud.features();
            let mut feats = Tensor2D::zeros(b.len(), BASE_CHANNELS + 3);
            for (r, &src) in b.source.iter().enumerate() {
                let row = feats.row_mut(r);
                row[..BASE_CHANNELS].copy_from_slice(old.row(r));
                row[BASE_CHANNELS..].copy_from_slice(&normals[src]);
            }
            let cloud = PointCloud::new(
                b.cloud.positions().to_vec(),
                feats,
                b.cloud.labels().to_vec(),
            )?;
            Ok(Block {
                cloud,
                source: b.source,
            })
        })
        .collect()
}

/// The block reordered by cell, then position, then original index.
pub fn canonical_sort(block: &Block, cell_size: f64) -> Result<Block> {
    let order = canonical_order(block.cloud.positions(), cell_size)?;
    Ok(Block {
        cloud: block.cloud.permuted(&order),
        source: order.iter().map(|&i| block.source[i]).collect(),
    })
}
