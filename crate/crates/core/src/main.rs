//! Command-line entry points: train, eval, predict, ablate, gen-data,
//! count. Exit codes: 0 success, 2 config error, 3 data error,
//! 4 numerical abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vidseg::config::RunConfig;
use vidseg::data::{export_clip, generate_synthetic_clip, load_dataset, Difficulty, SynthConfig};
use vidseg::harness::{self, AblationAxis, HarnessError};
use vidseg::model::Network;

#[derive(Parser)]
#[command(name = "vidseg", about = "Siamese-transformer video segmentation with mixture attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Flat key = value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<usize>,
    /// Disable encoder weight sharing (twin independent encoders).
    #[arg(long = "no-siamese")]
    no_siamese: bool,
    /// Bypass mixture attention (features pass straight to the decoders).
    #[arg(long = "no-mixture-attention")]
    no_mixture_attention: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset root (<root>/<clip>/Frame, <root>/<clip>/GT).
    #[arg(long)]
    data: Option<PathBuf>,
}

impl CommonOpts {
    fn build(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if self.no_siamese {
            cfg.siamese = false;
        }
        if self.no_mixture_attention {
            cfg.mixture_attention = false;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(data) = &self.data {
            cfg.data_dir = Some(data.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured dataset; writes runlog.csv and checkpoints.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Continue from last.ckpt in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint: per-frame/per-clip/summary/curve CSVs.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint base path (without extension), e.g. runs/out/best.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write prediction PNGs.
        #[arg(long)]
        pngs: bool,
    },
    /// Write prediction PNGs for a dataset.
    Predict {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an ablation grid: components | lambda | delta.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        axis: AblationAxis,
    },
    /// Generate a synthetic dataset in the loader's directory layout.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 40)]
        clips: usize,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value = "easy")]
        difficulty: Difficulty,
        /// Static polyp lookalikes per clip; defaults to the difficulty's
        /// convention (easy 0, medium 1, hard 2).
        #[arg(long)]
        distractors: Option<usize>,
        /// Maximum per-frame polyp displacement in pixels.
        #[arg(long, default_value_t = 1.5)]
        max_speed: f64,
        /// Upper bound on moving polyps per clip (1 or 2).
        #[arg(long, default_value_t = 2)]
        polyps_max: usize,
    },
    /// Print analytic parameter and FLOP counts for the configuration.
    Count {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { common, resume } => {
            let cfg = common.build()?;
            cfg.validate(true)?;
            let clips = load_dataset(cfg.data_dir.as_ref().expect("validated"))?;
            let out = harness::train_with_clips(&cfg, &clips, resume)?;
            println!(
                "trained {} epochs; best val dice {:.4} at epoch {}; checkpoints in {}",
                out.log.records.len(),
                out.best_dice,
                out.best_epoch,
                cfg.out_dir.display()
            );
        }
        Command::Eval { common, checkpoint, pngs } => {
            let cfg = common.build()?;
            cfg.validate(true)?;
            let clips = load_dataset(cfg.data_dir.as_ref().expect("validated"))?;
            let out = harness::evaluate(&cfg, &checkpoint, &clips, pngs)?;
            let s = &out.overall;
            println!(
                "frames {}: dice {:.4} f {:.4} fw {:.4} sen {:.4} s {:.4} e {:.4} (skips: sen {}, fw {})",
                s.frames,
                s.dice,
                s.f_mean,
                s.f_weighted,
                s.sensitivity,
                s.s_measure,
                s.e_mean,
                s.skipped_sensitivity,
                s.skipped_f_weighted
            );
            for clip in &out.skipped_clips {
                eprintln!("warning: clip {clip} shorter than delta+1, skipped");
            }
        }
        Command::Predict { common, checkpoint } => {
            let cfg = common.build()?;
            cfg.validate(true)?;
            let clips = load_dataset(cfg.data_dir.as_ref().expect("validated"))?;
            harness::predict(&cfg, &checkpoint, &clips)?;
            println!("predictions written to {}", cfg.out_dir.join("preds").display());
        }
        Command::Ablate { common, axis } => {
            let cfg = common.build()?;
            cfg.validate(true)?;
            let clips = load_dataset(cfg.data_dir.as_ref().expect("validated"))?;
            let rows = harness::ablate(&cfg, axis, &clips)?;
            println!("variant,s_measure,dice,sensitivity");
            for r in &rows {
                println!("{},{:.4},{:.4},{:.4}", r.label, r.s_measure, r.dice, r.sensitivity);
            }
        }
        Command::GenData {
            common,
            clips,
            frames,
            resolution,
            difficulty,
            distractors,
            max_speed,
            polyps_max,
        } => {
            let cfg = common.build()?;
            let synth = SynthConfig {
                n_frames: frames,
                height: resolution,
                width: resolution,
                difficulty,
                distractors: distractors
                    .unwrap_or_else(|| SynthConfig::default_distractors(difficulty)),
                max_speed,
                polyps_max,
            };
            std::fs::create_dir_all(&cfg.out_dir)?;
            for i in 0..clips {
                let clip = generate_synthetic_clip(cfg.seed, i as u64, &synth);
                export_clip(&clip, &cfg.out_dir)?;
            }
            println!("wrote {clips} clips x {frames} frames to {}", cfg.out_dir.display());
        }
        Command::Count { common } => {
            let cfg = common.build()?;
            cfg.validate(false)?;
            let (net, store) = Network::init(&cfg.model_config(), cfg.seed)?;
            let (params, flops) = net.count_params_flops(&store);
            println!("params: {params}");
            println!("forward flops per frame pair: {flops}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
