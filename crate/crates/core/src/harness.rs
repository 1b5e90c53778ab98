//! Train / evaluate / predict / ablate engines behind the CLI.
//!
//! Determinism contract: given (seed, config, data), two runs produce
//! byte-identical run logs and checkpoints. Everything stochastic draws
//! from labeled substreams of the root seed; wall-clock timings go to a
//! separate `timings.csv` that is excluded from that contract.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::GrayImage;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::data::{
    frame_to_tensor, load_dataset, mask_to_tensor, DataError, FramePair, VideoClip,
};
use crate::loss::total_loss;
use crate::metrics::{self, DiceMode, FrameMetrics, Summary};
use crate::model::{
    load_checkpoint, save_checkpoint, CheckpointMeta, Network,
};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::rng::{shuffle, SeedTree};
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Tensor(#[from] TensorError),
    #[error("numerical abort at step {step} (lr {lr:.3e}, grad norm {grad_norm:.3e}): {message}")]
    Numeric { step: u64, lr: f64, grad_norm: f64, message: String },
    #[error("checkpoint/config mismatch: checkpoint hash {ckpt}, config hash {cfg}")]
    HashMismatch { ckpt: String, cfg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// CLI exit code for an error (0 success, 2 config, 3 data, 4 numerics).
pub fn exit_code(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Config(_) | HarnessError::HashMismatch { .. } => 2,
        HarnessError::Data(_) => 3,
        HarnessError::Numeric { .. } => 4,
        _ => 1,
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

// ── run log ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub lr: f64,
}

/// Deterministic per-epoch trace; serialized as CSV with the seed and
/// config hash in header comments.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn new(seed: u64, config_hash: String) -> Self {
        RunLog { seed, config_hash, records: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(out, "epoch,train_loss,val_dice,lr");
        for r in &self.records {
            // Shortest round-trip float formatting, so a parsed log is
            // bit-identical to the in-memory trace.
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_dice, r.lr);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut log = RunLog::new(0, String::new());
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# seed=") {
                log.seed = rest.parse().unwrap_or(0);
            } else if let Some(rest) = line.strip_prefix("# config_hash=") {
                log.config_hash = rest.to_string();
            } else if line.starts_with('#') || line.starts_with("epoch") || line.is_empty() {
                continue;
            } else {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() == 4 {
                    log.records.push(EpochRecord {
                        epoch: cols[0].parse().unwrap_or(0),
                        train_loss: cols[1].parse().unwrap_or(f64::NAN),
                        val_dice: cols[2].parse().unwrap_or(f64::NAN),
                        lr: cols[3].parse().unwrap_or(f64::NAN),
                    });
                }
            }
        }
        Ok(log)
    }
}

// ── shared plumbing ─────────────────────────────────────────────────────

fn make_pair(clip: &VideoClip, t_anchor: usize, delta: usize, res: usize) -> FramePair {
    FramePair {
        anchor: frame_to_tensor(&clip.frames[t_anchor]),
        reference: frame_to_tensor(&clip.frames[t_anchor - delta]),
        anchor_mask: mask_to_tensor(&clip.masks[t_anchor]),
        reference_mask: mask_to_tensor(&clip.masks[t_anchor - delta]),
        t_anchor,
        t_reference: t_anchor - delta,
    }
    .at_resolution(res)
}

/// Deterministic train/validation split: the last `val_fraction` of the
/// clip list (already in stable order) is held out.
pub fn split_clips(clips: &[VideoClip], val_fraction: f64) -> (Vec<&VideoClip>, Vec<&VideoClip>) {
    let n_val = ((clips.len() as f64 * val_fraction).round() as usize).min(clips.len());
    let cut = clips.len() - n_val;
    (clips[..cut].iter().collect(), clips[cut..].iter().collect())
}

/// Rounds a probability map to the 8-bit PNG payload (half away from
/// zero, like the emitted files).
pub fn quantize_map(map: &Tensor) -> Vec<u8> {
    map.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

/// The metric input corresponding to an emitted PNG: quantized bytes
/// divided by 255, so PNG round-trips are exact.
pub fn quantized_tensor(map: &Tensor) -> Tensor {
    Tensor::new(
        map.shape().to_vec(),
        quantize_map(map).iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("same shape")
}

/// Per-frame probability maps for a whole clip under the pairing protocol:
/// frame T ≥ Δ takes its prediction from the pair where it is the anchor;
/// frames T < Δ take theirs from the pair where they serve as reference.
/// Frames a short clip cannot cover are `None`.
pub fn predict_clip_maps(
    net: &Network,
    store: &ParamStore,
    clip: &VideoClip,
    delta: usize,
    res: usize,
) -> Result<Vec<Option<Tensor>>> {
    let mut maps: Vec<Option<Tensor>> = vec![None; clip.len()];
    for t in delta..clip.len() {
        let pair = make_pair(clip, t, delta, res);
        let (map_a, map_r) = net.predict_pair(store, &pair)?;
        maps[t] = Some(map_a);
        if t - delta < delta {
            maps[t - delta] = Some(map_r);
        }
    }
    Ok(maps)
}

fn gt_tensor(clip: &VideoClip, idx: usize, res: usize) -> Tensor {
    let m = crate::data::resize_nearest_chw(&mask_to_tensor(&clip.masks[idx]), res, res);
    Tensor::new(vec![res, res], m.into_data()).expect("mask shape")
}

// ── training ────────────────────────────────────────────────────────────

pub struct TrainOutcome {
    pub log: RunLog,
    pub best_dice: f64,
    pub best_epoch: usize,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
}

/// Loads the dataset from `cfg.data_dir` and trains.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate(true)?;
    let clips = load_dataset(cfg.data_dir.as_ref().expect("validated"))?;
    train_with_clips(cfg, &clips, false)
}

/// Full training loop over in-memory clips. With `resume`, picks up from
/// `last.ckpt` in the output directory and continues the same trace.
pub fn train_with_clips(cfg: &RunConfig, clips: &[VideoClip], resume: bool) -> Result<TrainOutcome> {
    cfg.validate(false)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let (train_clips, val_clips) = split_clips(clips, cfg.val_fraction);
    let tree = SeedTree::new(cfg.seed);
    let hash = cfg.hash();
    let model_cfg = cfg.model_config();

    let best_path = cfg.out_dir.join("best");
    let last_path = cfg.out_dir.join("last");
    let runlog_path = cfg.out_dir.join("runlog.csv");

    let (net, mut store) = Network::init(&model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&store);
    let mut log = RunLog::new(cfg.seed, hash.clone());
    let mut start_epoch = 0usize;
    let mut best_dice = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;

    if resume && last_path.with_extension("ckpt").exists() {
        let (loaded, adam_loaded, meta) = load_checkpoint(&last_path)?;
        if meta.config_hash != hash {
            return Err(HarnessError::HashMismatch { ckpt: meta.config_hash, cfg: hash });
        }
        store.load_values_from(&loaded)?;
        if let Some(a) = adam_loaded {
            adam = a;
        }
        start_epoch = meta.epoch + 1;
        log = RunLog::from_csv(&fs::read_to_string(&runlog_path)?)?;
        if best_path.with_extension("json").exists() {
            let bm: CheckpointMeta =
                serde_json::from_str(&fs::read_to_string(best_path.with_extension("json"))?)
                    .map_err(|e| TensorError::Invalid(e.to_string()))?;
            best_dice = bm.best_dice;
            best_epoch = bm.epoch;
        }
    }

    let mut timings = String::from("epoch,seconds\n");
    let mut step: u64 = adam.step_count();

    for epoch in start_epoch..cfg.epochs {
        let epoch_start = Instant::now();
        let lr = cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_decay_every.max(1)) as i32);
        let adam_cfg = AdamConfig { lr, ..Default::default() };

        // Per-epoch pair plan: a fresh substream per (epoch, clip), so
        // ablation variants sharing the seed see identical data order.
        let mut items: Vec<(usize, usize)> = Vec::new();
        for (ci, clip) in train_clips.iter().enumerate() {
            if clip.len() <= cfg.delta {
                continue; // too short; surfaced by the caller's warnings
            }
            let mut anchors: Vec<usize> = (cfg.delta..clip.len()).collect();
            let mut rng = tree.stream_indexed(&format!("pairs.{epoch}"), ci as u64);
            shuffle(&mut rng, &mut anchors);
            anchors.truncate(cfg.pairs_per_clip);
            items.extend(anchors.into_iter().map(|t| (ci, t)));
        }
        let mut rng = tree.stream_indexed("order", epoch as u64);
        shuffle(&mut rng, &mut items);

        let mut flip_rng = tree.stream_indexed("augment", epoch as u64);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in items.chunks(cfg.batch_size) {
            let mut tape = if cfg.debug_numerics { Tape::with_finite_checks() } else { Tape::new() };
            let mut batch_loss = None;
            for &(ci, t) in batch {
                let mut pair = make_pair(train_clips[ci], t, cfg.delta, cfg.resolution);
                if cfg.augment && rand::Rng::gen::<bool>(&mut flip_rng) {
                    pair = pair.hflipped();
                }
                let a = tape.constant(pair.anchor);
                let r = tape.constant(pair.reference);
                let (pa, pr) = net.forward_pair(&mut tape, &store, a, r)?;
                let ya = tape.constant(pair.anchor_mask);
                let yr = tape.constant(pair.reference_mask);
                let loss = total_loss(&mut tape, &pa, &pr, ya, yr, cfg.weight_window)?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let total = tape.scale(batch_loss.expect("nonempty batch"), 1.0 / batch.len() as f64)?;
            let loss_value = tape.value(total).item();
            step += 1;
            if !loss_value.is_finite() {
                return Err(HarnessError::Numeric {
                    step,
                    lr,
                    grad_norm: f64::NAN,
                    message: format!("loss = {loss_value}"),
                });
            }
            tape.backward(total)?;
            let grads = tape.param_grads(&store);
            let grad_norm: f64 = grads
                .iter()
                .flatten()
                .flat_map(|g| g.iter())
                .map(|&v| v * v)
                .sum::<f64>()
                .sqrt();
            if !grad_norm.is_finite() {
                return Err(HarnessError::Numeric {
                    step,
                    lr,
                    grad_norm,
                    message: "non-finite gradient".into(),
                });
            }
            adam.step(&mut store, &grads, &adam_cfg)?;
            loss_sum += loss_value * batch.len() as f64;
            loss_count += batch.len();
        }

        let val_dice = quick_val_dice(&net, &store, &val_clips, cfg)?;
        log.records.push(EpochRecord {
            epoch,
            train_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
            val_dice,
            lr,
        });
        fs::write(&runlog_path, log.to_csv())?;
        let _ = writeln!(timings, "{},{:.3}", epoch, epoch_start.elapsed().as_secs_f64());

        let meta = CheckpointMeta {
            arch: model_cfg.clone(),
            config_hash: hash.clone(),
            epoch,
            best_dice: best_dice.max(val_dice),
            param_count: store.total_len(),
        };
        save_checkpoint(&last_path, &store, &meta, Some(&adam))?;
        if val_dice > best_dice {
            best_dice = val_dice;
            best_epoch = epoch;
            let best_meta = CheckpointMeta { epoch, best_dice, ..meta };
            save_checkpoint(&best_path, &store, &best_meta, None)?;
        }
    }

    fs::write(cfg.out_dir.join("timings.csv"), timings)?;
    Ok(TrainOutcome {
        log,
        best_dice: if best_dice.is_finite() { best_dice } else { 0.0 },
        best_epoch,
        best_path,
        last_path,
    })
}

/// Fast validation Dice for checkpoint selection: up to `pairs_per_clip`
/// evenly spaced anchors per held-out clip, finest map, quantized, fixed
/// or adaptive threshold per config.
fn quick_val_dice(net: &Network, store: &ParamStore, val: &[&VideoClip], cfg: &RunConfig) -> Result<f64> {
    let mut dices = Vec::new();
    for clip in val {
        if clip.len() <= cfg.delta {
            continue;
        }
        let span = clip.len() - cfg.delta;
        let take = cfg.pairs_per_clip.min(span).max(1);
        for k in 0..take {
            let t = cfg.delta + k * span / take;
            let pair = make_pair(clip, t, cfg.delta, cfg.resolution);
            let (map_a, _) = net.predict_pair(store, &pair)?;
            let pred = quantized_tensor(&map_a);
            let gt = gt_tensor(clip, t, cfg.resolution);
            let bin_data = match cfg.dice_mode() {
                DiceMode::Fixed => pred.data().iter().map(|&v| (v > 0.5) as u8 as f64).collect(),
                DiceMode::Adaptive => metrics::binarize_adaptive(&pred),
            };
            let bin = Tensor::new(pred.shape().to_vec(), bin_data)?;
            dices.push(metrics::dice(&bin, &gt)?);
        }
    }
    Ok(if dices.is_empty() { 0.0 } else { dices.iter().sum::<f64>() / dices.len() as f64 })
}

// ── evaluation ──────────────────────────────────────────────────────────

pub struct ClipReport {
    pub clip_id: String,
    pub frames: Vec<(usize, FrameMetrics)>,
    pub summary: Summary,
    pub uncovered: usize,
}

pub struct EvalOutcome {
    pub per_clip: Vec<ClipReport>,
    pub overall: Summary,
    pub curves: metrics::Curves,
    pub skipped_clips: Vec<String>,
}

/// Evaluates a checkpoint over clips: per-frame CSV, per-clip CSV, summary
/// CSV, curve CSV, and optionally the prediction PNGs the metrics were
/// computed from.
pub fn evaluate(
    cfg: &RunConfig,
    ckpt_base: &Path,
    clips: &[VideoClip],
    write_pngs: bool,
) -> Result<EvalOutcome> {
    let (net, store, meta) = crate::model::load_network(ckpt_base)?;
    if meta.config_hash != cfg.hash() {
        return Err(HarnessError::HashMismatch { ckpt: meta.config_hash, cfg: cfg.hash() });
    }
    evaluate_with_network(cfg, &net, &store, clips, write_pngs)
}

/// Same as [`evaluate`] with an already-loaded network (ablations reuse
/// this without touching disk twice).
pub fn evaluate_with_network(
    cfg: &RunConfig,
    net: &Network,
    store: &ParamStore,
    clips: &[VideoClip],
    write_pngs: bool,
) -> Result<EvalOutcome> {
    fs::create_dir_all(&cfg.out_dir)?;
    let res = cfg.resolution;
    let mut per_clip = Vec::new();
    let mut skipped_clips = Vec::new();
    let mut all_frames: Vec<FrameMetrics> = Vec::new();
    let mut all_pairs: Vec<(Tensor, Tensor)> = Vec::new();

    for clip in clips {
        if clip.len() <= cfg.delta {
            skipped_clips.push(clip.clip_id.clone());
            continue;
        }
        let maps = predict_clip_maps(net, store, clip, cfg.delta, res)?;
        let mut frames = Vec::new();
        let mut uncovered = 0usize;
        for (idx, map) in maps.iter().enumerate() {
            let Some(map) = map else {
                uncovered += 1;
                continue;
            };
            let pred = quantized_tensor(map);
            let gt = gt_tensor(clip, idx, res);
            if write_pngs {
                let dir = cfg.out_dir.join("preds").join(&clip.clip_id);
                fs::create_dir_all(&dir)?;
                let img = GrayImage::from_raw(res as u32, res as u32, quantize_map(map))
                    .expect("map buffer");
                img.save(dir.join(format!("{idx:04}.png")))
                    .map_err(|e| DataError::BadImage {
                        path: dir.join(format!("{idx:04}.png")),
                        reason: e.to_string(),
                    })?;
            }
            let fm = metrics::evaluate_frame(&pred, &gt, cfg.dice_mode())?;
            frames.push((idx, fm.clone()));
            all_frames.push(fm);
            all_pairs.push((pred, gt));
        }
        let summary = metrics::summarize(
            &frames.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>(),
        );
        per_clip.push(ClipReport { clip_id: clip.clip_id.clone(), frames, summary, uncovered });
    }

    let overall = metrics::summarize(&all_frames);
    let (curves, _) = metrics::curves(&all_pairs)?;
    write_eval_csvs(&cfg.out_dir, &per_clip, &overall, &curves, &skipped_clips)?;
    Ok(EvalOutcome { per_clip, overall, curves, skipped_clips })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".into(),
    }
}

fn write_eval_csvs(
    out_dir: &Path,
    per_clip: &[ClipReport],
    overall: &Summary,
    curves: &metrics::Curves,
    skipped: &[String],
) -> Result<()> {
    let mut pf = String::from("clip_id,frame_idx,dice,f_mean,f_weighted,sensitivity,s_measure,e_mean\n");
    for clip in per_clip {
        for (idx, m) in &clip.frames {
            let _ = writeln!(
                pf,
                "{},{},{:.6},{:.6},{},{},{:.6},{:.6}",
                clip.clip_id,
                idx,
                m.dice,
                m.f_mean,
                fmt_opt(m.f_weighted),
                fmt_opt(m.sensitivity),
                m.s_measure,
                m.e_mean
            );
        }
    }
    fs::write(out_dir.join("per_frame.csv"), pf)?;

    let summary_row = |label: &str, s: &Summary| -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            label,
            s.frames,
            s.dice,
            s.f_mean,
            s.f_weighted,
            s.sensitivity,
            s.s_measure,
            s.e_mean,
            s.skipped_f_weighted,
            s.skipped_sensitivity
        )
    };
    let header = "clip_id,frames,dice,f_mean,f_weighted,sensitivity,s_measure,e_mean,skipped_f_weighted,skipped_sensitivity\n";
    let mut pc = String::from(header);
    for clip in per_clip {
        pc.push_str(&summary_row(&clip.clip_id, &clip.summary));
    }
    fs::write(out_dir.join("per_clip.csv"), pc)?;

    let mut sm = String::from(header);
    sm.push_str(&summary_row("overall", overall));
    for s in skipped {
        let _ = writeln!(sm, "# skipped clip (too short): {s}");
    }
    fs::write(out_dir.join("summary.csv"), sm)?;

    let mut cv = String::from("threshold,precision,recall,f,e\n");
    for k in 0..256 {
        let _ = writeln!(
            cv,
            "{},{:.6},{:.6},{:.6},{:.6}",
            k, curves.precision[k], curves.recall[k], curves.f[k], curves.e[k]
        );
    }
    fs::write(out_dir.join("curves.csv"), cv)?;
    Ok(())
}

/// Prediction PNGs only (no metrics, masks not required to be meaningful).
pub fn predict(cfg: &RunConfig, ckpt_base: &Path, clips: &[VideoClip]) -> Result<()> {
    let (net, store, meta) = crate::model::load_network(ckpt_base)?;
    if meta.config_hash != cfg.hash() {
        return Err(HarnessError::HashMismatch { ckpt: meta.config_hash, cfg: cfg.hash() });
    }
    for clip in clips {
        if clip.len() <= cfg.delta {
            continue;
        }
        let maps = predict_clip_maps(&net, &store, clip, cfg.delta, cfg.resolution)?;
        let dir = cfg.out_dir.join("preds").join(&clip.clip_id);
        fs::create_dir_all(&dir)?;
        for (idx, map) in maps.iter().enumerate() {
            if let Some(map) = map {
                let img = GrayImage::from_raw(
                    cfg.resolution as u32,
                    cfg.resolution as u32,
                    quantize_map(map),
                )
                .expect("map buffer");
                let path = dir.join(format!("{idx:04}.png"));
                img.save(&path)
                    .map_err(|e| DataError::BadImage { path, reason: e.to_string() })?;
            }
        }
    }
    Ok(())
}

// ── ablation ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Components,
    Lambda,
    Delta,
}

impl std::str::FromStr for AblationAxis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "components" => Ok(AblationAxis::Components),
            "lambda" => Ok(AblationAxis::Lambda),
            "delta" => Ok(AblationAxis::Delta),
            other => Err(format!("unknown ablation axis {other}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub s_measure: f64,
    pub dice: f64,
    pub sensitivity: f64,
}

/// The published grids: component toggles (baseline, +Siamese, +M-A,
/// full), λ ∈ {0, 0.3, 0.5, 0.7, 1}, Δ ∈ {1, 2, 3, 5}.
pub fn ablation_variants(cfg: &RunConfig, axis: AblationAxis) -> Vec<(String, RunConfig)> {
    match axis {
        AblationAxis::Components => [
            ("baseline", false, false),
            ("siamese", true, false),
            ("mixture_attention", false, true),
            ("full", true, true),
        ]
        .iter()
        .map(|(label, siamese, ma)| {
            let mut v = cfg.clone();
            v.siamese = *siamese;
            v.mixture_attention = *ma;
            (label.to_string(), v)
        })
        .collect(),
        AblationAxis::Lambda => [0.0, 0.3, 0.5, 0.7, 1.0]
            .iter()
            .map(|&l| {
                let mut v = cfg.clone();
                v.lambda = l;
                (format!("lambda_{l}"), v)
            })
            .collect(),
        AblationAxis::Delta => [1usize, 2, 3, 5]
            .iter()
            .map(|&d| {
                let mut v = cfg.clone();
                v.delta = d;
                (format!("delta_{d}"), v)
            })
            .collect(),
    }
}

/// Trains and evaluates every grid point with the shared seed, writing
/// `ablation_<axis>.csv` (label, S-measure, Dice, sensitivity).
pub fn ablate(cfg: &RunConfig, axis: AblationAxis, clips: &[VideoClip]) -> Result<Vec<AblationRow>> {
    let axis_name = match axis {
        AblationAxis::Components => "components",
        AblationAxis::Lambda => "lambda",
        AblationAxis::Delta => "delta",
    };
    let mut rows = Vec::new();
    for (label, mut variant) in ablation_variants(cfg, axis) {
        variant.out_dir = cfg.out_dir.join(format!("ablate_{axis_name}")).join(&label);
        let outcome = train_with_clips(&variant, clips, false)?;
        let (net, store, _) = crate::model::load_network(&outcome.best_path)?;
        let (_, val) = split_clips(clips, variant.val_fraction);
        let val_owned: Vec<VideoClip> = val.into_iter().cloned().collect();
        let eval = evaluate_with_network(&variant, &net, &store, &val_owned, false)?;
        rows.push(AblationRow {
            label,
            s_measure: eval.overall.s_measure,
            dice: eval.overall.dice,
            sensitivity: eval.overall.sensitivity,
        });
    }
    let mut csv = String::from("variant,s_measure,dice,sensitivity\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{:.6},{:.6},{:.6}", r.label, r.s_measure, r.dice, r.sensitivity);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(format!("ablation_{axis_name}.csv")), csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_clip, SynthConfig};

    fn tiny_clips(n: usize, frames: usize, res: usize) -> Vec<VideoClip> {
        (0..n)
            .map(|i| {
                generate_synthetic_clip(
                    100,
                    i as u64,
                    &SynthConfig { n_frames: frames, height: res, width: res, ..Default::default() },
                )
            })
            .collect()
    }

    fn tiny_cfg(out: &str) -> RunConfig {
        RunConfig {
            resolution: 32,
            epochs: 1,
            pairs_per_clip: 1,
            batch_size: 1,
            out_dir: std::env::temp_dir().join(format!("vidseg_h_{}_{out}", std::process::id())),
            ..Default::default()
        }
    }

    #[test]
    fn runlog_roundtrips_through_csv() {
        let mut log = RunLog::new(7, "cafe".into());
        log.records.push(EpochRecord { epoch: 0, train_loss: 1.25, val_dice: 0.5, lr: 1e-3 });
        let text = log.to_csv();
        let back = RunLog::from_csv(&text).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn split_holds_out_the_tail() {
        let clips = tiny_clips(5, 4, 32);
        let (train, val) = split_clips(&clips, 0.2);
        assert_eq!(train.len(), 4);
        assert_eq!(val.len(), 1);
        assert_eq!(val[0].clip_id, clips[4].clip_id);
    }

    #[test]
    fn one_epoch_smoke_and_checkpoint_emission() {
        let cfg = tiny_cfg("smoke");
        let _ = fs::remove_dir_all(&cfg.out_dir);
        let clips = tiny_clips(3, 4, 32);
        let out = train_with_clips(&cfg, &clips, false).unwrap();
        assert_eq!(out.log.records.len(), 1);
        assert!(out.best_path.with_extension("ckpt").exists());
        assert!(cfg.out_dir.join("runlog.csv").exists());
        assert!(cfg.out_dir.join("timings.csv").exists());
        fs::remove_dir_all(&cfg.out_dir).unwrap();
    }

    #[test]
    fn evaluation_writes_csvs_and_pngs_roundtrip() {
        let cfg = tiny_cfg("eval");
        let _ = fs::remove_dir_all(&cfg.out_dir);
        let clips = tiny_clips(2, 5, 32);
        let out = train_with_clips(&cfg, &clips, false).unwrap();
        let eval = evaluate(&cfg, &out.best_path, &clips, true).unwrap();
        assert!(!eval.per_clip.is_empty());
        assert!(cfg.out_dir.join("per_frame.csv").exists());
        assert!(cfg.out_dir.join("curves.csv").exists());

        // Emitted PNG equals the metric input exactly.
        let clip = &clips[0];
        let (net, store, _) = crate::model::load_network(&out.best_path).unwrap();
        let maps = predict_clip_maps(&net, &store, clip, cfg.delta, cfg.resolution).unwrap();
        let map = maps[cfg.delta].as_ref().unwrap();
        let png_path = cfg
            .out_dir
            .join("preds")
            .join(&clip.clip_id)
            .join(format!("{:04}.png", cfg.delta));
        let img = image::open(&png_path).unwrap().to_luma8();
        assert_eq!(img.as_raw(), &quantize_map(map));
        fs::remove_dir_all(&cfg.out_dir).unwrap();
    }

    #[test]
    fn eval_hash_mismatch_is_rejected() {
        let cfg = tiny_cfg("hash");
        let _ = fs::remove_dir_all(&cfg.out_dir);
        let clips = tiny_clips(2, 4, 32);
        let out = train_with_clips(&cfg, &clips, false).unwrap();
        let mut other = cfg.clone();
        other.lambda = 0.3;
        let err = evaluate(&other, &out.best_path, &clips, false);
        assert!(matches!(err, Err(HarnessError::HashMismatch { .. })));
        fs::remove_dir_all(&cfg.out_dir).unwrap();
    }

    #[test]
    fn ablation_grids_match_the_published_row_sets() {
        let cfg = tiny_cfg("grid");
        let comps = ablation_variants(&cfg, AblationAxis::Components);
        let labels: Vec<&str> = comps.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, vec!["baseline", "siamese", "mixture_attention", "full"]);
        assert!(!comps[0].1.siamese && !comps[0].1.mixture_attention);
        assert!(comps[3].1.siamese && comps[3].1.mixture_attention);

        let lambdas: Vec<f64> = ablation_variants(&cfg, AblationAxis::Lambda)
            .iter()
            .map(|(_, v)| v.lambda)
            .collect();
        assert_eq!(lambdas, vec![0.0, 0.3, 0.5, 0.7, 1.0]);

        let deltas: Vec<usize> = ablation_variants(&cfg, AblationAxis::Delta)
            .iter()
            .map(|(_, v)| v.delta)
            .collect();
        assert_eq!(deltas, vec![1, 2, 3, 5]);
    }

    #[test]
    fn seeded_smoke_run_reduces_loss() {
        let mut cfg = tiny_cfg("loss_down");
        cfg.epochs = 3;
        cfg.pairs_per_clip = 2;
        let _ = fs::remove_dir_all(&cfg.out_dir);
        let clips = tiny_clips(4, 6, 32);
        let out = train_with_clips(&cfg, &clips, false).unwrap();
        let first = out.log.records.first().unwrap().train_loss;
        let last = out.log.records.last().unwrap().train_loss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        fs::remove_dir_all(&cfg.out_dir).unwrap();
    }

    #[test]
    fn train_split_scores_at_least_as_well_as_held_out() {
        // Seeded sanity: a checkpoint evaluated on its own training clips
        // does no worse than on the held-out split.
        let mut cfg = tiny_cfg("train_ge_val");
        cfg.epochs = 4;
        cfg.pairs_per_clip = 2;
        let _ = fs::remove_dir_all(&cfg.out_dir);
        let clips = tiny_clips(6, 6, 32);
        let out = train_with_clips(&cfg, &clips, false).unwrap();
        let (net, store, _) = crate::model::load_network(&out.best_path).unwrap();
        let (train, val) = split_clips(&clips, cfg.val_fraction);
        let train_owned: Vec<VideoClip> = train.into_iter().cloned().collect();
        let val_owned: Vec<VideoClip> = val.into_iter().cloned().collect();
        let mut c1 = cfg.clone();
        c1.out_dir = cfg.out_dir.join("tr");
        let on_train = evaluate_with_network(&c1, &net, &store, &train_owned, false).unwrap();
        let mut c2 = cfg.clone();
        c2.out_dir = cfg.out_dir.join("va");
        let on_val = evaluate_with_network(&c2, &net, &store, &val_owned, false).unwrap();
        assert!(
            on_train.overall.dice >= on_val.overall.dice,
            "train dice {} < val dice {}",
            on_train.overall.dice,
            on_val.overall.dice
        );
        fs::remove_dir_all(&cfg.out_dir).unwrap();
    }

    #[test]
    fn evaluation_is_byte_deterministic() {
        let cfg = tiny_cfg("eval_det");
        let _ = fs::remove_dir_all(&cfg.out_dir);
        let clips = tiny_clips(2, 5, 32);
        let out = train_with_clips(&cfg, &clips, false).unwrap();
        let mut read = |tag: &str| -> Vec<Vec<u8>> {
            let mut c = cfg.clone();
            c.out_dir = cfg.out_dir.join(tag);
            evaluate(&c, &out.best_path, &clips, false).unwrap();
            ["per_frame.csv", "per_clip.csv", "summary.csv", "curves.csv"]
                .iter()
                .map(|f| fs::read(c.out_dir.join(f)).unwrap())
                .collect()
        };
        assert_eq!(read("a"), read("b"));
        fs::remove_dir_all(&cfg.out_dir).unwrap();
    }

    #[test]
    fn augmentation_flag_changes_the_trace_deterministically() {
        let clips = tiny_clips(3, 5, 32);
        let run = |augment: bool, tag: &str| -> Vec<f64> {
            let mut cfg = tiny_cfg(tag);
            cfg.augment = augment;
            cfg.epochs = 2;
            let _ = fs::remove_dir_all(&cfg.out_dir);
            let out = train_with_clips(&cfg, &clips, false).unwrap();
            let losses = out.log.records.iter().map(|r| r.train_loss).collect();
            fs::remove_dir_all(&cfg.out_dir).unwrap();
            losses
        };
        let plain = run(false, "aug_off");
        let flipped = run(true, "aug_on");
        let flipped2 = run(true, "aug_on2");
        assert_ne!(plain, flipped, "augmentation had no effect");
        assert_eq!(flipped, flipped2, "augmented runs must stay deterministic");
    }

    #[test]
    fn resume_continues_the_loss_trace() {
        let clips = tiny_clips(3, 4, 32);
        let mut cfg_full = tiny_cfg("resume_full");
        cfg_full.epochs = 2;
        let _ = fs::remove_dir_all(&cfg_full.out_dir);
        let full = train_with_clips(&cfg_full, &clips, false).unwrap();

        let mut cfg_half = tiny_cfg("resume_half");
        let _ = fs::remove_dir_all(&cfg_half.out_dir);
        cfg_half.epochs = 1;
        train_with_clips(&cfg_half, &clips, false).unwrap();
        cfg_half.epochs = 2;
        let resumed = train_with_clips(&cfg_half, &clips, true).unwrap();

        assert_eq!(full.log.records.len(), resumed.log.records.len());
        for (a, b) in full.log.records.iter().zip(&resumed.log.records) {
            assert_eq!(a.train_loss, b.train_loss, "epoch {}", a.epoch);
            assert_eq!(a.val_dice, b.val_dice);
        }
        fs::remove_dir_all(&cfg_full.out_dir).unwrap();
        fs::remove_dir_all(&cfg_half.out_dir).unwrap();
    }
}
