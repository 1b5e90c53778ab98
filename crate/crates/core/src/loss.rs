//! Hybrid weighted BCE + weighted IoU objective with deep supervision.
//!
//! Each pixel's weight grows near mask boundaries (where a windowed average
//! of the ground truth disagrees with the center pixel), pushing the model
//! toward the hard pixels. The total loss sums the hybrid term over the
//! four supervised maps of both frames, each against its own ground truth.

use crate::decoder::PredictionSet;
use crate::tape::{PadMode, Tape, Var};
use crate::tensor::{Result, TensorError};

/// Boundary emphasis factor in the weight map `1 + GAIN·|avg(y) − y|`.
pub const WEIGHT_GAIN: f64 = 5.0;

/// Smoothing constant in the IoU ratio.
pub const IOU_EPS: f64 = 1.0;

/// Per-pixel weights from a binary mask: 1 on locally constant regions,
/// up to `1 + GAIN` near boundaries. Replicate padding keeps constant
/// masks at exactly 1.
pub fn weight_map(tape: &mut Tape, mask: Var, window: usize) -> Result<Var> {
    let avg = tape.avgpool(mask, window, PadMode::Replicate)?;
    let diff = tape.sub(avg, mask)?;
    let pos = tape.relu(diff)?;
    let negdiff = tape.scale(diff, -1.0)?;
    let neg = tape.relu(negdiff)?;
    let absdiff = tape.add(pos, neg)?;
    let scaled = tape.scale(absdiff, WEIGHT_GAIN)?;
    tape.add_scalar(scaled, 1.0)
}

/// Stable elementwise binary cross-entropy on logits:
/// `max(l, 0) − l·y + ln(1 + e^{−|l|})`.
fn bce_elem(tape: &mut Tape, logits: Var, target: Var) -> Result<Var> {
    let pos = tape.relu(logits)?;
    let negl = tape.scale(logits, -1.0)?;
    let negpart = tape.relu(negl)?;
    let abs = tape.add(pos, negpart)?;
    let negabs = tape.scale(abs, -1.0)?;
    let log_term = tape.softplus(negabs)?;
    let ly = tape.mul(logits, target)?;
    let linear = tape.sub(pos, ly)?;
    tape.add(linear, log_term)
}

/// Weighted BCE: `Σ w·bce / Σ w`. Invariant to uniform weight rescaling.
pub fn weighted_bce(tape: &mut Tape, logits: Var, target: Var, weights: Var) -> Result<Var> {
    check_shapes(tape, logits, target, weights)?;
    let bce = bce_elem(tape, logits, target)?;
    let weighted = tape.mul(weights, bce)?;
    let num = tape.sum(weighted)?;
    let den = tape.sum(weights)?;
    tape.div(num, den)
}

/// Weighted IoU: `1 − (Σ w·p·y + ε) / (Σ w·(p + y − p·y) + ε)` with
/// `p = σ(logits)`.
pub fn weighted_iou(tape: &mut Tape, logits: Var, target: Var, weights: Var) -> Result<Var> {
    check_shapes(tape, logits, target, weights)?;
    let p = tape.sigmoid(logits)?;
    let py = tape.mul(p, target)?;
    let wi = tape.mul(weights, py)?;
    let inter = tape.sum(wi)?;
    let psum = tape.add(p, target)?;
    let union_elem = tape.sub(psum, py)?;
    let wu = tape.mul(weights, union_elem)?;
    let uni = tape.sum(wu)?;
    let num = tape.add_scalar(inter, IOU_EPS)?;
    let den = tape.add_scalar(uni, IOU_EPS)?;
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// One map's hybrid term.
pub fn hybrid(tape: &mut Tape, logits: Var, target: Var, weights: Var) -> Result<Var> {
    let b = weighted_bce(tape, logits, target, weights)?;
    let i = weighted_iou(tape, logits, target, weights)?;
    tape.add(b, i)
}

/// Deep-supervision total: the hybrid term summed over all four maps of
/// both frames, each frame supervised by its own mask.
pub fn total_loss(
    tape: &mut Tape,
    preds_anchor: &PredictionSet,
    preds_reference: &PredictionSet,
    mask_anchor: Var,
    mask_reference: Var,
    weight_window: usize,
) -> Result<Var> {
    if preds_anchor.maps.len() != 4 || preds_reference.maps.len() != 4 {
        return Err(TensorError::Invalid(format!(
            "deep supervision expects 4 maps per frame, got {} and {}",
            preds_anchor.maps.len(),
            preds_reference.maps.len()
        )));
    }
    let w_a = weight_map(tape, mask_anchor, weight_window)?;
    let w_r = weight_map(tape, mask_reference, weight_window)?;
    let mut total: Option<Var> = None;
    for (preds, mask, w) in [
        (preds_anchor, mask_anchor, w_a),
        (preds_reference, mask_reference, w_r),
    ] {
        for &map in &preds.maps {
            let term = hybrid(tape, map, mask, w)?;
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term)?,
            });
        }
    }
    Ok(total.expect("at least one map"))
}

fn check_shapes(tape: &Tape, logits: Var, target: Var, weights: Var) -> Result<()> {
    for other in [target, weights] {
        if tape.shape(logits) != tape.shape(other) {
            return Err(TensorError::ShapeMismatch {
                op: "loss",
                lhs: tape.shape(logits).to_vec(),
                rhs: tape.shape(other).to_vec(),
            });
        }
    }
    Ok(())
}
