//! Command-line front end. Every command takes the same flag set; a TOML
//! file given with `--config` fills anything the flags leave unset, and
//! built-in defaults fill the rest.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Mode;
use crate::syndata::{ParamRanges, Split};

pub use commands::{bench, bench_model, eval, gen_data, infer_frame, infer_video, train, BenchReport, LatencyStats};

/// Env var capping the worker-thread count.
pub const THREADS_ENV: &str = "ECHOGRAPH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "echographs", version, about = "Contour keypoints and ejection fraction from echo videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (annotations.csv + videos/).
    GenData,
    /// Train a model; writes model.egrf, last.egrf and loss.csv.
    Train,
    /// Keypoints for one image or one video frame, as an annotation row.
    InferFrame,
    /// Whole-video EF report (two-stage or classifier pipeline).
    InferVideo,
    /// Segmentation and EF metrics on a dataset split.
    Eval,
    /// Forward-pass latency and parameter count.
    Bench,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// TOML file with any RunConfig keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint; repeat for the two-stage pipeline.
    #[arg(long, global = true)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// single_frame | multi_frame_known | multi_frame_classifier, or
    /// two_stage | classifier for infer-video.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    #[arg(long, global = true)]
    pub spiral_len: Option<usize>,
    #[arg(long, global = true)]
    pub n_disks: Option<usize>,
    /// Clip length of multi-frame models and sliding windows.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    /// Number of cases for gen-data.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    #[arg(long, global = true)]
    pub video: Option<PathBuf>,
    /// 8-bit grayscale PNG or PGM for infer-frame.
    #[arg(long, global = true)]
    pub image: Option<PathBuf>,
    /// Frame index of --video for infer-frame.
    #[arg(long, global = true)]
    pub frame: Option<usize>,
    /// Annotation-format CSV scored by eval instead of a checkpoint.
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    /// Dataset split used by eval.
    #[arg(long, global = true)]
    pub split: Option<Split>,
    #[arg(long, global = true)]
    pub repetitions: Option<usize>,
}

/// Effective settings of a run. Echoed into every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub ckpt: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
    pub seed: u64,
    pub spiral_len: usize,
    pub window: usize,
    /// Defaults to half the window.
    pub stride: Option<usize>,
    pub n_disks: usize,

    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub min_lr_fraction: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub shuffle: bool,
    pub lambda_ef: f64,
    pub lambda_cls: f64,
    pub gt_weight: f64,
    pub other_weight: f64,

    pub count: usize,
    /// Annotate every frame instead of only ED and ES.
    pub all_frames: bool,
    /// Train / val / test fractions.
    pub split_ratios: [f64; 3],
    pub ranges: ParamRanges,

    pub video: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub frame: usize,
    pub predictions: Option<PathBuf>,
    pub split: Split,
    pub smoothing: usize,
    pub min_separation: usize,
    /// Peak prominence as a fraction of the volume curve's range.
    pub min_prominence: f64,

    pub repetitions: usize,
    pub warmup_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            ckpt: Vec::new(),
            out: None,
            mode: None,
            seed: 0,
            spiral_len: 5,
            window: 16,
            stride: None,
            n_disks: crate::geometry::DEFAULT_N_DISKS,
            epochs: 30,
            batch: 8,
            lr: 1e-3,
            warmup_steps: 50,
            min_lr_fraction: 0.01,
            grad_clip: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            shuffle: true,
            lambda_ef: 1.0,
            lambda_cls: 0.1,
            gt_weight: 5.0,
            other_weight: 1.0,
            count: 100,
            all_frames: false,
            split_ratios: [0.8, 0.1, 0.1],
            ranges: ParamRanges::default(),
            video: None,
            image: None,
            frame: 0,
            predictions: None,
            split: Split::Test,
            smoothing: 3,
            min_separation: 5,
            min_prominence: 0.25,
            repetitions: 50,
            warmup_runs: 5,
        }
    }
}

macro_rules! overlay {
    ($cfg:ident, $flags:ident; $($field:ident),*) => {
        $(if let Some(v) = $flags.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    /// Defaults, then the `--config` file, then explicit flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::from_toml(&crate::io::read_string(path)?)?,
            None => Self::default(),
        };
        overlay!(cfg, flags; seed, spiral_len, n_disks, window, epochs, lr, batch, count, frame, split, repetitions);
        if flags.data.is_some() {
            cfg.data = flags.data.clone();
        }
        if !flags.ckpt.is_empty() {
            cfg.ckpt = flags.ckpt.clone();
        }
        for (dst, src) in [
            (&mut cfg.out, &flags.out),
            (&mut cfg.video, &flags.video),
            (&mut cfg.image, &flags.image),
            (&mut cfg.predictions, &flags.predictions),
        ] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        if flags.mode.is_some() {
            cfg.mode = flags.mode.clone();
        }
        if flags.stride.is_some() {
            cfg.stride = flags.stride;
        }
        Ok(cfg)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.window / 2).max(1))
    }

    /// Model mode for train and bench; single frame when unset.
    pub fn model_mode(&self) -> Result<Mode> {
        self.mode.as_deref().map_or(Ok(Mode::SingleFrame), str::parse)
    }

    /// Range checks done before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
            ("gt_weight", self.gt_weight),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.beta1 < 1.0 && self.beta2 < 1.0) {
            return bad("Adam betas must be below 1".into());
        }
        for (name, v) in [
            ("min_lr_fraction", self.min_lr_fraction),
            ("grad_clip", self.grad_clip),
            ("lambda_ef", self.lambda_ef),
            ("lambda_cls", self.lambda_cls),
            ("other_weight", self.other_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.min_prominence) {
            return bad(format!("min_prominence must be in [0, 1], got {}", self.min_prominence));
        }
        if self.min_lr_fraction > 1.0 {
            return bad("min_lr_fraction must be at most 1".into());
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch", self.batch),
            ("spiral_len", self.spiral_len),
            ("n_disks", self.n_disks),
            ("repetitions", self.repetitions),
            ("smoothing", self.smoothing),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.window < 2 {
            return bad(format!("window must be at least 2 frames, got {}", self.window));
        }
        if self.stride == Some(0) {
            return bad("stride must be positive".into());
        }
        if self.ranges.image_size < 16 {
            return bad(format!("image size {} is below 16 px", self.ranges.image_size));
        }
        Ok(())
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::Config("--data is required".into()))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))
    }
}

/// Sizes the global rayon pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    let cfg = RunConfig::resolve(&cli.flags)?;
    cfg.validate()?;
    match cli.command {
        Command::GenData => gen_data(&cfg),
        Command::Train => train(&cfg),
        Command::InferFrame => infer_frame(&cfg),
        Command::InferVideo => infer_video(&cfg),
        Command::Eval => eval(&cfg),
        Command::Bench => bench(&cfg),
    }
}

/// Binary entry point: errors go to stderr with their causes and exit 1.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
