//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line overrides, each layer replacing the one before.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! train.lr = 0.05
//! network.cascade_strides = 1, 2, 3
//! data.normal_center = 0, 0, 0
//! ```

use std::path::Path;
use std::str::FromStr;

use crate::data::RoomSpec;
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::pipeline::DataConfig;
use crate::training::TrainConfig;

/// Every setting of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed for initialization, shuffling, sampling and synthesis.
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: RoomSpec,
    pub rooms: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            synth: RoomSpec::default(),
            rooms: 4,
        }
    }
}

/// Recognized keys, in the order they are documented.
pub const KEYS: &[&str] = &[
    "seed",
    "network.classes",
    "network.cell_size",
    "network.cascade_strides",
    "network.cascade_widths",
    "network.parallel_strides",
    "network.parallel_widths",
    "train.lr",
    "train.momentum",
    "train.batch_size",
    "train.epochs",
    "train.checkpoint_every",
    "train.lr_decay_every",
    "train.lr_decay_factor",
    "data.channels",
    "data.k_neighbors",
    "data.block_size",
    "data.points_per_block",
    "data.min_points",
    "data.normal_center",
    "synth.rooms",
    "synth.points",
    "synth.classes",
    "synth.objects",
    "synth.noise",
    "synth.size",
    "synth.floor_only",
];

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = list(key, value)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected three comma-separated numbers")))
}

/// `key = value` pairs of a config file, in file order.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 'key = value', found '{line}'"),
            });
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = scalar(key, value)?,
            "network.classes" => self.network.class_count = scalar(key, value)?,
            "network.cell_size" => self.network.cell_size = scalar(key, value)?,
            "network.cascade_strides" => self.network.cascade_strides = list(key, value)?,
            "network.cascade_widths" => self.network.cascade_widths = list(key, value)?,
            "network.parallel_strides" => self.network.parallel_strides = list(key, value)?,
            "network.parallel_widths" => self.network.parallel_widths = list(key, value)?,
            "train.lr" => self.train.learning_rate = scalar(key, value)?,
            "train.momentum" => self.train.momentum = scalar(key, value)?,
            "train.batch_size" => self.train.batch_size = scalar(key, value)?,
            "train.epochs" => self.train.epochs = scalar(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = scalar(key, value)?,
            "train.lr_decay_every" => self.train.lr_decay_every = scalar(key, value)?,
            "train.lr_decay_factor" => self.train.lr_decay_factor = scalar(key, value)?,
            "data.channels" => self.data.channels = scalar(key, value)?,
            "data.k_neighbors" => self.data.k_neighbors = scalar(key, value)?,
            "data.block_size" => self.data.block_size = scalar(key, value)?,
            "data.points_per_block" => self.data.points_per_block = scalar(key, value)?,
            "data.min_points" => self.data.min_points = scalar(key, value)?,
            "data.normal_center" => self.data.normal_center = triple(key, value)?,
            "synth.rooms" => self.rooms = scalar(key, value)?,
            "synth.points" => self.synth.points = scalar(key, value)?,
            "synth.classes" => self.synth.classes = scalar(key, value)?,
            "synth.objects" => self.synth.objects = scalar(key, value)?,
            "synth.noise" => self.synth.noise = scalar(key, value)?,
            "synth.size" => self.synth.size = triple(key, value)?,
            "synth.floor_only" => self.synth.floor_only = scalar(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    /// Defaults, then `file` (if any), then `overrides`; validated.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_config(&text, path)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Propagates shared values (seed, channel count) and validates.
    pub fn finish(&mut self) -> Result<()> {
        self.network.in_channels = self.data.channels;
        self.network.seed = self.seed;
        self.train.seed = self.seed;
        self.network.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.synth.validate()
    }
}
