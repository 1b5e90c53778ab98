//! Segmentation evaluation: Dice, mean and weighted F-measure, sensitivity,
//! structure measure, enhanced-alignment measure, and threshold-sweep
//! curves.
//!
//! Conventions, stated once and tested:
//! - binarization is strict `>` (ties fall to background), with one carve:
//!   when the adaptive threshold clamps to exactly 1, full-intensity pixels
//!   stay foreground — a binary map then always reproduces itself, F at
//!   β²=1 equals Dice, and an all-zero map still binarizes empty;
//! - the 256-threshold sweeps binarize with strict `>` at `k/255`;
//! - frames with an empty ground truth skip sensitivity and the weighted
//!   F-measure; skips are counted, never silent;
//! - every returned scalar lies in [0, 1].

use crate::tensor::{Result, Tensor, TensorError};

pub const BETA_SQ_MEAN_F: f64 = 0.3;
pub const BETA_SQ_WEIGHTED_F: f64 = 1.0;
pub const S_MEASURE_ALPHA: f64 = 0.5;
const EPS: f64 = f64::EPSILON;

/// How Dice binarizes a soft prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiceMode {
    /// Fixed 0.5 threshold (default).
    Fixed,
    /// Twice-the-mean adaptive threshold.
    Adaptive,
}

/// Per-frame metric values. `None` marks a skipped (undefined) value.
#[derive(Debug, Clone)]
pub struct FrameMetrics {
    pub dice: f64,
    pub f_mean: f64,
    pub f_weighted: Option<f64>,
    pub sensitivity: Option<f64>,
    pub s_measure: f64,
    pub e_mean: f64,
}

/// Threshold-sweep curves, 256 entries each (thresholds k/255).
#[derive(Debug, Clone)]
pub struct Curves {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub e: Vec<f64>,
}

/// Sequence-level report: per-frame values, their means, skip counts, and
/// the averaged curves.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub per_frame: Vec<FrameMetrics>,
    pub mean_dice: f64,
    pub mean_f: f64,
    pub mean_f_weighted: f64,
    pub mean_sensitivity: f64,
    pub mean_s: f64,
    pub mean_e: f64,
    pub skipped_sensitivity: usize,
    pub skipped_f_weighted: usize,
    pub curves: Curves,
}

fn validate(pred: &Tensor, gt: &Tensor) -> Result<()> {
    if pred.shape() != gt.shape() || pred.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "metrics",
            lhs: pred.shape().to_vec(),
            rhs: gt.shape().to_vec(),
        });
    }
    if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(TensorError::Invalid("ground truth must be binary".into()));
    }
    if pred.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(TensorError::Invalid("prediction must lie in [0, 1]".into()));
    }
    Ok(())
}

fn counts(pred_bin: &[f64], gt: &[f64]) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut pos) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred_bin.iter().zip(gt) {
        if p > 0.5 && g > 0.5 {
            tp += 1.0;
        } else if p > 0.5 {
            fp += 1.0;
        }
        if g > 0.5 {
            pos += 1.0;
        }
    }
    (tp, fp, pos)
}

/// Dice of two binary maps; 1 when both are empty.
pub fn dice(pred_bin: &Tensor, gt: &Tensor) -> Result<f64> {
    validate(pred_bin, gt)?;
    if pred_bin.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(TensorError::Invalid("dice expects a binary prediction".into()));
    }
    let (tp, fp, pos) = counts(pred_bin.data(), gt.data());
    let denom = (tp + fp) + pos;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp / denom)
}

/// Twice the mean intensity, clamped to 1.
pub fn adaptive_threshold(pred: &Tensor) -> f64 {
    let mean = pred.data().iter().sum::<f64>() / pred.numel() as f64;
    (2.0 * mean).min(1.0)
}

fn binarize_at(pred: &Tensor, thr: f64) -> Vec<f64> {
    pred.data().iter().map(|&v| if v > thr { 1.0 } else { 0.0 }).collect()
}

/// Adaptive binarization: strict `>` at `min(2·mean, 1)`, except that
/// full-intensity pixels survive a clamped threshold of exactly 1.
pub fn binarize_adaptive(pred: &Tensor) -> Vec<f64> {
    let thr = adaptive_threshold(pred);
    pred.data()
        .iter()
        .map(|&v| if v > thr || (thr >= 1.0 && v >= 1.0) { 1.0 } else { 0.0 })
        .collect()
}

fn f_beta(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / den
    }
}

/// Mean F-measure: binarize at the adaptive threshold, then
/// `(1+β²)·P·R / (β²·P + R)`. Empty prediction or empty ground truth give
/// 0, unless both are empty (1).
pub fn f_measure_mean(pred: &Tensor, gt: &Tensor, beta_sq: f64) -> Result<f64> {
    validate(pred, gt)?;
    let bin = binarize_adaptive(pred);
    let (tp, fp, pos) = counts(&bin, gt.data());
    let pred_count = tp + fp;
    if pred_count == 0.0 && pos == 0.0 {
        return Ok(1.0);
    }
    if pred_count == 0.0 || pos == 0.0 {
        return Ok(0.0);
    }
    Ok(f_beta(tp / pred_count, tp / pos, beta_sq))
}

/// Fraction of ground-truth pixels recovered; undefined (None) when the
/// ground truth is empty.
pub fn sensitivity(pred_bin: &Tensor, gt: &Tensor) -> Result<Option<f64>> {
    validate(pred_bin, gt)?;
    let (tp, _, pos) = counts(pred_bin.data(), gt.data());
    if pos == 0.0 {
        return Ok(None);
    }
    Ok(Some(tp / pos))
}

/// Fraction of predicted pixels that are correct; undefined when the
/// prediction is empty.
pub fn precision(pred_bin: &Tensor, gt: &Tensor) -> Result<Option<f64>> {
    validate(pred_bin, gt)?;
    let (tp, fp, _) = counts(pred_bin.data(), gt.data());
    if tp + fp == 0.0 {
        return Ok(None);
    }
    Ok(Some(tp / (tp + fp)))
}

// ── weighted F-measure ──────────────────────────────────────────────────

/// Exact nearest-foreground distances and indices, brute force (desk-scale
/// maps are small).
fn distance_to_foreground(gt: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let fg: Vec<usize> = (0..h * w).filter(|&i| gt[i] > 0.5).collect();
    let mut dist = vec![0.0; h * w];
    let mut idx: Vec<usize> = (0..h * w).collect();
    for i in 0..h * w {
        if gt[i] > 0.5 {
            continue;
        }
        let (r, c) = (i / w, i % w);
        let mut best = f64::INFINITY;
        let mut best_at = i;
        for &j in &fg {
            let (fr, fc) = (j / w, j % w);
            let d = ((r as f64 - fr as f64).powi(2) + (c as f64 - fc as f64).powi(2)).sqrt();
            if d < best {
                best = d;
                best_at = j;
            }
        }
        dist[i] = best;
        idx[i] = best_at;
    }
    (dist, idx)
}

/// Normalized 7×7 Gaussian, σ = 5.
fn gaussian7() -> [f64; 49] {
    let mut k = [0.0; 49];
    let mut sum = 0.0;
    for r in 0..7 {
        for c in 0..7 {
            let (dy, dx) = (r as f64 - 3.0, c as f64 - 3.0);
            let v = (-(dy * dy + dx * dx) / (2.0 * 25.0)).exp();
            k[r * 7 + c] = v;
            sum += v;
        }
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn filter_gaussian7(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian7();
    let mut out = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut s = 0.0;
            for kr in -3..=3isize {
                for kc in -3..=3isize {
                    let (ir, ic) = (r + kr, c + kc);
                    if ir >= 0 && ir < h as isize && ic >= 0 && ic < w as isize {
                        s += k[((kr + 3) * 7 + kc + 3) as usize] * x[ir as usize * w + ic as usize];
                    }
                }
            }
            out[r as usize * w + c as usize] = s;
        }
    }
    out
}

/// Weighted F-measure: the error map is propagated from the foreground to
/// its dependent background ring, a Gaussian neighborhood discounts errors
/// with nearby support, and background errors decay with distance to the
/// object. `None` when the ground truth is empty.
pub fn f_measure_weighted(pred: &Tensor, gt: &Tensor, beta_sq: f64) -> Result<Option<f64>> {
    validate(pred, gt)?;
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let gtd = gt.data();
    let pos: f64 = gtd.iter().sum();
    if pos == 0.0 {
        return Ok(None);
    }
    let pd = pred.data();
    let err: Vec<f64> = pd.iter().zip(gtd).map(|(&p, &g)| (p - g).abs()).collect();

    let (dist, idx) = distance_to_foreground(gtd, h, w);
    let mut err_t = err.clone();
    for i in 0..h * w {
        if gtd[i] < 0.5 {
            err_t[i] = err[idx[i]];
        }
    }
    let blurred = filter_gaussian7(&err_t, h, w);
    let mut min_err = err.clone();
    for i in 0..h * w {
        if gtd[i] > 0.5 && blurred[i] < err[i] {
            min_err[i] = blurred[i];
        }
    }
    let ln_half = 0.5_f64.ln();
    let mut weighted_err = vec![0.0; h * w];
    for i in 0..h * w {
        let b = if gtd[i] > 0.5 { 1.0 } else { 2.0 - (ln_half / 5.0 * dist[i]).exp() };
        weighted_err[i] = min_err[i] * b;
    }

    let fg_err: f64 = (0..h * w).filter(|&i| gtd[i] > 0.5).map(|i| weighted_err[i]).sum();
    let bg_err: f64 = (0..h * w).filter(|&i| gtd[i] < 0.5).map(|i| weighted_err[i]).sum();
    let tp_w = (pos - fg_err).max(0.0);
    let fp_w = bg_err;
    let recall_w = 1.0 - fg_err / pos;
    let precision_w = tp_w / (EPS + tp_w + fp_w);
    let den = EPS + beta_sq * precision_w + recall_w;
    Ok(Some(((1.0 + beta_sq) * precision_w * recall_w / den).clamp(0.0, 1.0)))
}

// ── structure measure ───────────────────────────────────────────────────

fn mean_of(data: &[f64]) -> f64 {
    if data.is_empty() {
        0.0
    } else {
        data.iter().sum::<f64>() / data.len() as f64
    }
}

/// Sample standard deviation (n−1), zero for fewer than two values.
fn sample_std(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let m = mean_of(data);
    (data.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (data.len() - 1) as f64).sqrt()
}

fn object_score(values: &[f64]) -> f64 {
    let x = mean_of(values);
    let s = sample_std(values);
    2.0 * x / (x * x + 1.0 + s + EPS)
}

fn s_object(pred: &[f64], gt: &[f64]) -> f64 {
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &g)| g > 0.5).map(|(&p, _)| p).collect();
    let bg: Vec<f64> =
        pred.iter().zip(gt).filter(|(_, &g)| g < 0.5).map(|(&p, _)| 1.0 - p).collect();
    let mu = mean_of(gt);
    mu * object_score(&fg) + (1.0 - mu) * object_score(&bg)
}

/// Region-similarity SSIM variant used by the structure measure
/// (n−1-normalized moments, special-cased zero numerator).
fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 1.0;
    }
    let (mx, my) = (mean_of(pred), mean_of(gt));
    let denom = (n - 1.0).max(1.0);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        vx += (p - mx) * (p - mx);
        vy += (g - my) * (g - my);
        cxy += (p - mx) * (g - my);
    }
    vx /= denom;
    vy /= denom;
    cxy /= denom;
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Splits at the ground-truth centroid and returns the area-weighted SSIM
/// over the four blocks.
fn s_region(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    // Centroid with half-up rounding of the 1-based mean coordinate.
    let (mut sr, mut sc, mut cnt) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if gt[r * w + c] > 0.5 {
                sr += (r + 1) as f64;
                sc += (c + 1) as f64;
                cnt += 1.0;
            }
        }
    }
    let cy = (sr / cnt).round() as usize;
    let cx = (sc / cnt).round() as usize;

    let block = |data: &[f64], r0: usize, r1: usize, c0: usize, c1: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for r in r0..r1 {
            for c in c0..c1 {
                out.push(data[r * w + c]);
            }
        }
        out
    };
    let quadrants = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let total = (h * w) as f64;
    let mut score = 0.0;
    for (r0, r1, c0, c1) in quadrants {
        let weight = ((r1 - r0) * (c1 - c0)) as f64 / total;
        if weight > 0.0 {
            score += weight * region_ssim(&block(pred, r0, r1, c0, c1), &block(gt, r0, r1, c0, c1));
        }
    }
    score
}

/// Structure measure `α·S_object + (1−α)·S_region`, with the degenerate
/// ground truths falling back to a comparison against the map mean.
pub fn s_measure(pred: &Tensor, gt: &Tensor, alpha: f64) -> Result<f64> {
    validate(pred, gt)?;
    let mu = mean_of(gt.data());
    let x = mean_of(pred.data());
    if mu == 0.0 {
        return Ok(1.0 - x);
    }
    if mu == 1.0 {
        return Ok(x);
    }
    let (h, w) = (gt.shape()[0], gt.shape()[1]);
    let q = alpha * s_object(pred.data(), gt.data())
        + (1.0 - alpha) * s_region(pred.data(), gt.data(), h, w);
    Ok(q.clamp(0.0, 1.0))
}

// ── enhanced-alignment measure ──────────────────────────────────────────

/// One threshold's alignment score.
fn e_phi(bin: &[f64], gt: &[f64]) -> f64 {
    let n = bin.len() as f64;
    let gsum: f64 = gt.iter().sum();
    if gsum == 0.0 {
        // Degenerate: score the absence of prediction.
        return bin.iter().map(|&b| 1.0 - b).sum::<f64>() / n;
    }
    if gsum == n {
        return bin.iter().sum::<f64>() / n;
    }
    let mg = gsum / n;
    let mp = bin.iter().sum::<f64>() / n;
    let mut acc = 0.0;
    for (&p, &g) in bin.iter().zip(gt) {
        let (fp, fg) = (p - mp, g - mg);
        let xi = 2.0 * fp * fg / (fp * fp + fg * fg + EPS);
        acc += (1.0 + xi) * (1.0 + xi) / 4.0;
    }
    acc / n
}

/// Mean E-measure over the 256-threshold sweep (strict `>` binarization).
pub fn e_measure_mean(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    validate(pred, gt)?;
    let mut total = 0.0;
    for k in 0..256 {
        let bin = binarize_at(pred, k as f64 / 255.0);
        total += e_phi(&bin, gt.data());
    }
    Ok(total / 256.0)
}

// ── curves & aggregation ────────────────────────────────────────────────

/// 256-threshold precision/recall/F/E curves averaged over the given map
/// pairs. Pairs with an empty ground truth are skipped; the skip count is
/// the second return.
pub fn curves(pairs: &[(Tensor, Tensor)]) -> Result<(Curves, usize)> {
    let mut out = Curves {
        precision: vec![0.0; 256],
        recall: vec![0.0; 256],
        f: vec![0.0; 256],
        e: vec![0.0; 256],
    };
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (pred, gt) in pairs {
        validate(pred, gt)?;
        if gt.data().iter().sum::<f64>() == 0.0 {
            skipped += 1;
            continue;
        }
        used += 1;
        for k in 0..256 {
            let bin = binarize_at(pred, k as f64 / 255.0);
            let (tp, fp, pos) = counts(&bin, gt.data());
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = tp / pos;
            out.precision[k] += p;
            out.recall[k] += r;
            out.f[k] += f_beta(p, r, BETA_SQ_MEAN_F);
            out.e[k] += e_phi(&bin, gt.data());
        }
    }
    if used > 0 {
        let inv = 1.0 / used as f64;
        for k in 0..256 {
            out.precision[k] *= inv;
            out.recall[k] *= inv;
            out.f[k] *= inv;
            out.e[k] *= inv;
        }
    }
    Ok((out, skipped))
}

/// Means over a set of frames, with per-metric skip counts.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub frames: usize,
    pub dice: f64,
    pub f_mean: f64,
    pub f_weighted: f64,
    pub sensitivity: f64,
    pub s_measure: f64,
    pub e_mean: f64,
    pub skipped_sensitivity: usize,
    pub skipped_f_weighted: usize,
}

pub fn summarize(frames: &[FrameMetrics]) -> Summary {
    let mean = |f: &dyn Fn(&FrameMetrics) -> f64| -> f64 {
        if frames.is_empty() {
            0.0
        } else {
            frames.iter().map(|m| f(m)).sum::<f64>() / frames.len() as f64
        }
    };
    let opt = |f: &dyn Fn(&FrameMetrics) -> Option<f64>| -> (f64, usize) {
        let vals: Vec<f64> = frames.iter().filter_map(f).collect();
        (mean_of(&vals), frames.len() - vals.len())
    };
    let (sensitivity, skipped_sensitivity) = opt(&|m| m.sensitivity);
    let (f_weighted, skipped_f_weighted) = opt(&|m| m.f_weighted);
    Summary {
        frames: frames.len(),
        dice: mean(&|m| m.dice),
        f_mean: mean(&|m| m.f_mean),
        s_measure: mean(&|m| m.s_measure),
        e_mean: mean(&|m| m.e_mean),
        f_weighted,
        sensitivity,
        skipped_sensitivity,
        skipped_f_weighted,
    }
}

/// Per-frame metrics for one prediction/ground-truth pair.
pub fn evaluate_frame(pred: &Tensor, gt: &Tensor, dice_mode: DiceMode) -> Result<FrameMetrics> {
    let bin_data = match dice_mode {
        DiceMode::Fixed => binarize_at(pred, 0.5),
        DiceMode::Adaptive => binarize_adaptive(pred),
    };
    let bin = Tensor::new(pred.shape().to_vec(), bin_data)?;
    Ok(FrameMetrics {
        dice: dice(&bin, gt)?,
        f_mean: f_measure_mean(pred, gt, BETA_SQ_MEAN_F)?,
        f_weighted: f_measure_weighted(pred, gt, BETA_SQ_WEIGHTED_F)?,
        sensitivity: sensitivity(&bin, gt)?,
        s_measure: s_measure(pred, gt, S_MEASURE_ALPHA)?,
        e_mean: e_measure_mean(pred, gt)?,
    })
}

/// Frame metrics averaged over a sequence; undefined frames are excluded
/// from the affected mean and reported in the skip counts.
pub fn evaluate_sequence(preds: &[Tensor], gts: &[Tensor], dice_mode: DiceMode) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(TensorError::Invalid(format!(
            "evaluate_sequence: {} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut per_frame = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(gts) {
        per_frame.push(evaluate_frame(p, g, dice_mode)?);
    }
    let s = summarize(&per_frame);
    let pairs: Vec<(Tensor, Tensor)> =
        preds.iter().cloned().zip(gts.iter().cloned()).collect();
    let (curves, _) = curves(&pairs)?;
    Ok(MetricReport {
        mean_dice: s.dice,
        mean_f: s.f_mean,
        mean_s: s.s_measure,
        mean_e: s.e_mean,
        mean_sensitivity: s.sensitivity,
        mean_f_weighted: s.f_weighted,
        skipped_sensitivity: s.skipped_sensitivity,
        skipped_f_weighted: s.skipped_f_weighted,
        per_frame,
        curves,
    })
}
