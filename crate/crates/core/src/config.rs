//! Run configuration: a flat `key = value` file plus CLI overrides.
//!
//! The config hash is the FNV-1a digest of the canonicalized
//! model-and-training keys (sorted, normalized formatting). Output and
//! dataset paths are excluded so that evaluating a checkpoint from a
//! different directory still hashes identically; the hash exists to catch
//! architecture/training mismatches, and it is embedded in checkpoints and
//! run logs.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::data::Difficulty;
use crate::metrics::DiceMode;
use crate::model::ModelConfig;
use crate::rng::fnv1a;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value for {key}: {reason}")]
    BadValue { key: String, reason: String },
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Architecture.
    pub resolution: usize,
    pub stage_channels: Vec<usize>,
    pub window: usize,
    pub channels: usize,
    pub patch: usize,
    pub lambda: f64,
    pub siamese: bool,
    pub mixture_attention: bool,
    // Sampling.
    pub delta: usize,
    pub pairs_per_clip: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    // Optimization.
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub weight_window: usize,
    // Misc.
    pub seed: u64,
    pub dice_adaptive: bool,
    pub difficulty: Difficulty,
    /// Horizontal-flip augmentation (off by default).
    pub augment: bool,
    /// Eager per-op NaN/Inf scans during training (diagnostic, slow).
    pub debug_numerics: bool,
    // Paths (not hashed).
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: 64,
            stage_channels: vec![16, 32, 64],
            window: 4,
            channels: 32,
            patch: 0,
            lambda: 0.7,
            siamese: true,
            mixture_attention: true,
            delta: 2,
            pairs_per_clip: 2,
            batch_size: 2,
            val_fraction: 0.2,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 10,
            epochs: 30,
            weight_window: 7,
            seed: 0,
            dice_adaptive: false,
            difficulty: Difficulty::Easy,
            augment: false,
            debug_numerics: false,
            data_dir: None,
            out_dir: PathBuf::from("runs/out"),
        }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            resolution: self.resolution,
            stage_channels: self.stage_channels.clone(),
            window: self.window,
            enhanced_channels: self.channels,
            patch: self.patch,
            lambda: self.lambda,
            siamese: self.siamese,
            mixture_attention: self.mixture_attention,
        }
    }

    pub fn dice_mode(&self) -> DiceMode {
        if self.dice_adaptive {
            DiceMode::Adaptive
        } else {
            DiceMode::Fixed
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue { key: key.into(), reason: reason.into() };
        macro_rules! num {
            ($t:ty) => {
                value.parse::<$t>().map_err(|e| bad(&e.to_string()))?
            };
        }
        match key {
            "resolution" => self.resolution = num!(usize),
            "stage_channels" => {
                self.stage_channels = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
            }
            "window" => self.window = num!(usize),
            "channels" => self.channels = num!(usize),
            "patch" => self.patch = num!(usize),
            "lambda" => self.lambda = num!(f64),
            "siamese" => self.siamese = num!(bool),
            "mixture_attention" => self.mixture_attention = num!(bool),
            "delta" => self.delta = num!(usize),
            "pairs_per_clip" => self.pairs_per_clip = num!(usize),
            "batch_size" => self.batch_size = num!(usize),
            "val_fraction" => self.val_fraction = num!(f64),
            "lr" => self.lr = num!(f64),
            "lr_decay" => self.lr_decay = num!(f64),
            "lr_decay_every" => self.lr_decay_every = num!(usize),
            "epochs" => self.epochs = num!(usize),
            "weight_window" => self.weight_window = num!(usize),
            "seed" => self.seed = num!(u64),
            "dice_adaptive" => self.dice_adaptive = num!(bool),
            "augment" => self.augment = num!(bool),
            "debug_numerics" => self.debug_numerics = num!(bool),
            "difficulty" => self.difficulty = value.parse().map_err(|e: String| bad(&e))?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Parses the flat `key = value` format over the defaults. `#` starts
    /// a comment; blank lines are fine.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: i + 1,
                reason: "expected key = value".into(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Validates cross-field constraints and path existence for commands
    /// that need a dataset.
    pub fn validate(&self, needs_data: bool) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: String| ConfigError::BadValue { key: key.into(), reason };
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(bad("lambda", format!("{} outside [0, 1]", self.lambda)));
        }
        if self.delta == 0 {
            return Err(bad("delta", "must be at least 1".into()));
        }
        if self.weight_window % 2 == 0 {
            return Err(bad("weight_window", "must be odd".into()));
        }
        if self.batch_size == 0 || self.pairs_per_clip == 0 {
            return Err(bad("batch_size", "batch and pairs_per_clip must be positive".into()));
        }
        self.model_config()
            .validate()
            .map_err(|e| bad("resolution", e.to_string()))?;
        if needs_data {
            match &self.data_dir {
                None => return Err(bad("data_dir", "required for this command".into())),
                Some(d) if !d.is_dir() => {
                    return Err(bad("data_dir", format!("{} is not a directory", d.display())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Canonical text of the hashed keys: sorted `key=value` lines,
    /// normalized number formatting. Paths are excluded (a checkpoint is
    /// valid from any directory), and so is `epochs` (resuming to train
    /// longer is the same run, just continued).
    pub fn canonical(&self) -> String {
        let mut lines: Vec<String> = vec![
            format!("augment={}", self.augment),
            format!("batch_size={}", self.batch_size),
            format!("channels={}", self.channels),
            format!("delta={}", self.delta),
            format!("dice_adaptive={}", self.dice_adaptive),
            format!("difficulty={:?}", self.difficulty),
            format!("lambda={:e}", self.lambda),
            format!("lr={:e}", self.lr),
            format!("lr_decay={:e}", self.lr_decay),
            format!("lr_decay_every={}", self.lr_decay_every),
            format!("mixture_attention={}", self.mixture_attention),
            format!("pairs_per_clip={}", self.pairs_per_clip),
            format!("patch={}", self.patch),
            format!("resolution={}", self.resolution),
            format!("seed={}", self.seed),
            format!("siamese={}", self.siamese),
            format!(
                "stage_channels={}",
                self.stage_channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
            ),
            format!("val_fraction={:e}", self.val_fraction),
            format!("weight_window={}", self.weight_window),
            format!("window={}", self.window),
        ];
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    /// Hex FNV-1a digest of the canonical form.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a(self.canonical().as_bytes()))
    }
}
