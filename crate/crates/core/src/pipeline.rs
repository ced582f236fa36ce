//! End-to-end steps shared by the command-line tool and the tests:
//! loading a dataset, turning rooms into training blocks, and predicting or
//! evaluating whole rooms.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    attach_normals, canonical_sort, partition_blocks, tile_room, Block, PartitionConfig, RoomCloud,
    DEFAULT_BLOCK_SIZE, DEFAULT_POINTS_PER_BLOCK, MIN_BLOCK_POINTS,
};
use crate::data::{generate_synthetic_room, load_cloud, write_cloud, RoomSpec};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::metrics::ConfusionMatrix;
use crate::network::Network;
use crate::normals::DEFAULT_K;

/// File extension of point-cloud files inside a dataset directory.
pub const CLOUD_EXTENSION: &str = "txt";

/// How rooms become network input.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// 9 (coordinates, color, room-normalized coordinates) or 12 (plus normals).
    pub channels: usize,
    pub k_neighbors: usize,
    pub block_size: f64,
    pub points_per_block: usize,
    pub min_points: usize,
    /// Orientation center for estimated normals, in room coordinates.
    pub normal_center: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            channels: 12,
            k_neighbors: DEFAULT_K,
            block_size: DEFAULT_BLOCK_SIZE,
            points_per_block: DEFAULT_POINTS_PER_BLOCK,
            min_points: MIN_BLOCK_POINTS,
            normal_center: [0.0; 3],
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels != 9 && self.channels != 12 {
            return Err(Error::Config(format!(
                "channels must be 9 or 12, got {}",
                self.channels
            )));
        }
        if self.k_neighbors < 3 {
            return Err(Error::Config(format!(
                "k-neighbors must be at least 3 for a plane fit, got {}",
                self.k_neighbors
            )));
        }
        if !self.normal_center.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("normal center must be finite".into()));
        }
        self.partition(0).validate()
    }

    pub fn partition(&self, seed: u64) -> PartitionConfig {
        PartitionConfig {
            block_size: self.block_size,
            points_per_block: self.points_per_block,
            min_points: self.min_points,
            seed,
        }
    }
}

/// Independent per-item seeds drawn from one master seed.
pub fn derive_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// The cloud files of a dataset: `path` itself when it is a file, otherwise
/// every `.txt` file directly inside it, sorted by name.
pub fn dataset_files(path: &Path) -> Result<Vec<PathBuf>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == CLOUD_EXTENSION) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .txt cloud files"),
        ));
    }
    Ok(files)
}

pub fn load_dataset(path: &Path) -> Result<Vec<RoomCloud>> {
    dataset_files(path)?.iter().map(load_cloud).collect()
}

/// Generates `rooms` synthetic rooms and writes them as `room_NNN.txt`.
pub fn write_synthetic_dataset(
    dir: &Path,
    spec: &RoomSpec,
    rooms: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    derive_seeds(seed, rooms)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("room_{i:03}.{CLOUD_EXTENSION}"));
            write_cloud(&path, &generate_synthetic_room(spec, s)?)?;
            Ok(path)
        })
        .collect()
}

fn with_channels(blocks: Vec<Block>, room: &RoomCloud, cfg: &DataConfig) -> Result<Vec<Block>> {
    if cfg.channels == 12 {
        attach_normals(blocks, room, cfg.k_neighbors, cfg.normal_center)
    } else {
        Ok(blocks)
    }
}

/// Partitioned, sampled and canonically sorted blocks of every room.
pub fn training_blocks(
    rooms: &[RoomCloud],
    cfg: &DataConfig,
    cell_size: f64,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (room, s) in rooms.iter().zip(derive_seeds(seed, rooms.len())) {
        let blocks = with_channels(partition_blocks(room, &cfg.partition(s))?, room, cfg)?;
        for b in blocks {
            out.push(canonical_sort(&b, cell_size)?.cloud);
        }
    }
    if out.is_empty() {
        warn!("no tile reached {} points", cfg.min_points);
    }
    info!("{} training blocks from {} rooms", out.len(), rooms.len());
    Ok(out)
}

fn check_channels(network: &Network, cfg: &DataConfig) -> Result<()> {
    let expected = network.config().in_channels;
    if expected != cfg.channels {
        return Err(Error::Config(format!(
            "checkpoint expects {expected} input channels but the data has {}",
            cfg.channels
        )));
    }
    Ok(())
}

/// One predicted class per room point, from every point of every tile.
pub fn predict_room(network: &Network, room: &RoomCloud, cfg: &DataConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    check_channels(network, cfg)?;
    let blocks = with_channels(tile_room(room, cfg.block_size)?, room, cfg)?;
    let mut pred = vec![0usize; room.len()];
    for b in &blocks {
        for (&src, p) in b.source.iter().zip(network.predict(&b.cloud)?) {
            pred[src] = p;
        }
    }
    Ok(pred)
}

/// Confusion matrix of `network` over labeled rooms.
pub fn evaluate(
    network: &Network,
    rooms: &[RoomCloud],
    cfg: &DataConfig,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(network.config().class_count);
    for (i, room) in rooms.iter().enumerate() {
        if !room.is_labeled() {
            return Err(Error::InvalidInput(format!(
                "room {i} has unlabeled points; evaluation needs ground truth"
            )));
        }
        cm.accumulate(&room.labels, &predict_room(network, room, cfg)?)?;
    }
    Ok(cm)
}
