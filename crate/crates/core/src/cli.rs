//! The `paaconv` command-line tool.
//!
//! Every flag that maps onto a setting becomes a `key = value` override
//! applied after the optional `--config` file, so flags win over the file
//! and the file wins over built-in defaults.
//!
//! Exit codes: 0 on success, 1 on an I/O failure, 2 on a configuration or
//! validation failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::config::RunConfig;
use crate::data::{load_cloud, write_cloud, write_ply, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::network::Network;
use crate::normals::estimate_normals;
use crate::pipeline::{
    dataset_files, evaluate, load_dataset, predict_room, training_blocks, write_synthetic_dataset,
};
use crate::training::{train_with, write_history_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "PAACONV_THREADS";

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";

#[derive(Debug, Parser)]
#[command(
    name = "paaconv",
    version,
    about = "Point-cloud semantic segmentation with pointwise atrous convolution",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write labeled synthetic rooms into a directory.
    Synth,
    /// Estimate oriented normals and write the cloud with normal columns.
    Normals,
    /// Train a network and write its checkpoint and loss history.
    Train,
    /// Evaluate a checkpoint on labeled data and write metric CSVs.
    Eval,
    /// Label clouds with a checkpoint's predictions.
    Predict,
    /// Export a cloud as binary PLY colored by label.
    ExportPly,
}

/// Flags shared by all subcommands; each subcommand reads what it needs.
#[derive(Debug, Args, Default)]
pub struct Settings {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Voxel edge in meters.
    #[arg(long, global = true)]
    pub cell_size: Option<f64>,
    /// 9 (no normals) or 12 (with normals).
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true)]
    pub k_neighbors: Option<usize>,
    /// Normal orientation center as `x,y,z`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub normal_center: Option<String>,
    #[arg(long, global = true)]
    pub block_size: Option<f64>,
    #[arg(long, global = true)]
    pub points_per_block: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub momentum: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Class count of generated rooms and of a new network.
    #[arg(long, global = true)]
    pub classes: Option<usize>,
    /// Rooms to generate.
    #[arg(long, global = true)]
    pub rooms: Option<usize>,
    /// Points per generated room.
    #[arg(long, global = true)]
    pub points: Option<usize>,
    /// Position noise of generated rooms, meters.
    #[arg(long, global = true)]
    pub noise: Option<f64>,
    #[arg(long, global = true)]
    pub floor_only: bool,
    /// Dataset: one cloud file or a directory of `.txt` clouds.
    #[arg(long, visible_alias = "input", global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write (train) or read (eval, predict).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// With predict: also write a PLY next to each output cloud.
    #[arg(long, global = true)]
    pub ply: bool,
}

impl Settings {
    /// Flag values as config overrides.
    pub fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((key.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("network.cell_size", self.cell_size.map(|v| v.to_string()));
        put("data.channels", self.channels.map(|v| v.to_string()));
        put("data.k_neighbors", self.k_neighbors.map(|v| v.to_string()));
        put("data.normal_center", self.normal_center.clone());
        put("data.block_size", self.block_size.map(|v| v.to_string()));
        put(
            "data.points_per_block",
            self.points_per_block.map(|v| v.to_string()),
        );
        put("train.lr", self.lr.map(|v| v.to_string()));
        put("train.momentum", self.momentum.map(|v| v.to_string()));
        put("train.batch_size", self.batch_size.map(|v| v.to_string()));
        put("train.epochs", self.epochs.map(|v| v.to_string()));
        put("network.classes", self.classes.map(|v| v.to_string()));
        put("synth.classes", self.classes.map(|v| v.to_string()));
        put("synth.rooms", self.rooms.map(|v| v.to_string()));
        put("synth.points", self.points.map(|v| v.to_string()));
        put("synth.noise", self.noise.map(|v| v.to_string()));
        put(
            "synth.floor_only",
            self.floor_only.then(|| "true".to_string()),
        );
        out
    }

    fn required<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("--{flag} is required")))
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_CONFIG
    } else {
        EXIT_IO
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let s = &cli.settings;
    let cfg = RunConfig::resolve(s.config.as_deref(), &s.overrides())?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg, s),
        Command::Normals => cmd_normals(&cfg, s),
        Command::Train => cmd_train(&cfg, s),
        Command::Eval => cmd_eval(&cfg, s).map(|_| ()),
        Command::Predict => cmd_predict(&cfg, s),
        Command::ExportPly => cmd_export_ply(s),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_synth(cfg: &RunConfig, s: &Settings) -> Result<()> {
    let dir = s.required(&s.out, "out")?;
    let files = write_synthetic_dataset(dir, &cfg.synth, cfg.rooms, cfg.seed)?;
    info!("wrote {} rooms to {}", files.len(), dir.display());
    Ok(())
}

fn cmd_normals(cfg: &RunConfig, s: &Settings) -> Result<()> {
    let input = s.required(&s.data, "data")?;
    let out = s.required(&s.out, "out")?;
    let mut room = load_cloud(input)?;
    let est = estimate_normals(
        &room.positions,
        cfg.data.k_neighbors,
        cfg.data.normal_center,
    )?;
    if est.fallbacks > 0 {
        warn!(
            "{} points had degenerate neighborhoods and got the fallback normal",
            est.fallbacks
        );
    }
    room.normals = Some(est.normals);
    write_cloud(out, &room)
}

fn history_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

fn cmd_train(cfg: &RunConfig, s: &Settings) -> Result<()> {
    let data = s.required(&s.data, "data")?;
    let checkpoint = s.required(&s.checkpoint, "checkpoint")?;
    let history = s.out.clone().unwrap_or_else(|| history_path(checkpoint));
    let rooms = load_dataset(data)?;
    let blocks = training_blocks(&rooms, &cfg.data, cfg.network.cell_size, cfg.seed)?;
    let network = Network::new(cfg.network.clone())?;
    info!("network with {} parameters", network.param_count());
    let every = cfg.train.checkpoint_every;
    let state = train_with(network, &blocks, &cfg.train, |st| {
        if every > 0 && st.epoch % every == 0 {
            let mut name = checkpoint.as_os_str().to_owned();
            name.push(format!(".epoch{}", st.epoch));
            st.network.save(PathBuf::from(name))?;
        }
        Ok(())
    })?;
    state.network.save(checkpoint)?;
    write_history_csv(&history, &state.history)?;
    if let Some(last) = state.history.last() {
        println!(
            "epochs {}  loss {:.6}  train OA {:.4}",
            last.epoch, last.mean_loss, last.train_oa
        );
    }
    Ok(())
}

/// Evaluates and writes `metrics.csv` and `confusion.csv` into `--out`
/// (default: current directory).
pub fn cmd_eval(cfg: &RunConfig, s: &Settings) -> Result<ConfusionMatrix> {
    let data = s.required(&s.data, "data")?;
    let network = Network::load(s.required(&s.checkpoint, "checkpoint")?)?;
    let rooms = load_dataset(data)?;
    let cm = evaluate(&network, &rooms, &cfg.data)?;
    let dir = s.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    cm.write_csvs(
        &dir.join(METRICS_FILE),
        &dir.join(CONFUSION_FILE),
        &CLASS_NAMES,
    )?;
    let macc = cm.mean_class_accuracy()?;
    let miou = cm.mean_iou()?;
    println!(
        "OA {:.4}  mAcc {:.4} ({} classes excluded)  mIoU {:.4} ({} excluded)",
        cm.overall_accuracy()?,
        macc.value,
        macc.excluded,
        miou.value,
        miou.excluded
    );
    Ok(cm)
}

fn cmd_predict(cfg: &RunConfig, s: &Settings) -> Result<()> {
    let data = s.required(&s.data, "data")?;
    let network = Network::load(s.required(&s.checkpoint, "checkpoint")?)?;
    let files = dataset_files(data)?;
    let single_file = data.is_file();
    for file in &files {
        let mut room = load_cloud(file)?;
        let pred = predict_room(&network, &room, &cfg.data)?;
        room.labels = pred.into_iter().map(Some).collect();
        let target = match (&s.out, single_file) {
            (Some(out), true) => out.clone(),
            (Some(out), false) => {
                std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                out.join(file.file_name().expect("listed files have names"))
            }
            (None, _) => file.clone(),
        };
        write_cloud(&target, &room)?;
        if s.ply {
            write_ply(target.with_extension("ply"), &room.positions, &room.labels)?;
        }
        info!("predicted {} points -> {}", room.len(), target.display());
    }
    Ok(())
}

fn cmd_export_ply(s: &Settings) -> Result<()> {
    let input = s.required(&s.data, "data")?;
    let out = s.required(&s.out, "out")?;
    let room = load_cloud(input)?;
    write_ply(out, &room.positions, &room.labels)
}
