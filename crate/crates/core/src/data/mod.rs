//! Room clouds, block partitioning, feature assembly and synthetic scenes.

mod blocks;
mod io;
mod synth;

pub use blocks::{
    attach_normals, canonical_sort, partition_blocks, room_normals, tile_room, Block,
    PartitionConfig, DEFAULT_BLOCK_SIZE, DEFAULT_POINTS_PER_BLOCK, MIN_BLOCK_POINTS,
};
pub use io::{format_cloud, load_cloud, parse_cloud, read_ply, write_cloud, write_ply, PlyCloud};
pub use synth::{generate_synthetic_room, RoomSpec};

/// Largest supported class count (and palette size).
pub const MAX_CLASSES: usize = 13;

pub const CLASS_NAMES: [&str; MAX_CLASSES] = [
    "floor", "wall", "ceiling", "table", "chair", "sofa", "bookcase", "board", "door", "window",
    "column", "beam", "clutter",
];

/// Fixed per-class display colors.
pub const PALETTE: [[u8; 3]; MAX_CLASSES] = [
    [152, 223, 138],
    [174, 199, 232],
    [255, 187, 120],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [188, 189, 34],
    [23, 190, 207],
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [127, 127, 127],
];

/// Color for points without a label.
pub const UNLABELED_COLOR: [u8; 3] = [0, 0, 0];

pub fn class_color(label: Option<usize>) -> [u8; 3] {
    label
        .and_then(|l| PALETTE.get(l).copied())
        .unwrap_or(UNLABELED_COLOR)
}

/// A whole room in absolute coordinates (meters).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoomCloud {
    pub positions: Vec<[f64; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub labels: Vec<Option<usize>>,
    /// Present when the source file carried normal columns.
    pub normals: Option<Vec<[f64; 3]>>,
}

impl RoomCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Componentwise `(min, max)` of the positions; zeros for an empty room.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        if self.positions.is_empty() {
            return ([0.0; 3], [0.0; 3]);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }
}
