//! Parallel deeply-supervised decoders.
//!
//! One weight set serves both frames (the decoders are parallel in data,
//! not in parameters). A neighbor-fusion head combines the three coarsest
//! inputs — the attention output, the texture-enhanced top level, and the
//! reduced coarsest side-out — into a rough global map; three
//! reverse-attention refinement stages then walk back up the pyramid,
//! each predicting a residual correction on top of the upsampled previous
//! map. Deep supervision keeps all four maps as outputs.

use rand_chacha::ChaCha12Rng;

use crate::encoder::PyramidFeatures;
use crate::params::{ParamId, ParamStore};
use crate::rng::trunc_normal;
use crate::tape::{PadMode, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRole {
    Anchor,
    Reference,
}

/// Four logit maps per frame, coarsest first, all upsampled to the input
/// resolution.
pub struct PredictionSet {
    pub maps: Vec<Var>,
    pub role: FrameRole,
}

impl PredictionSet {
    /// The finest refined map — the one evaluation scores.
    pub fn finest(&self) -> Var {
        *self.maps.last().expect("four maps")
    }
}

struct ConvP {
    w: ParamId,
    b: ParamId,
}

struct GraStage {
    narrow: ConvP,
    head: ConvP,
}

pub struct Decoder {
    reduce: Vec<ConvP>,
    fuse: ConvP,
    fuse_head: ConvP,
    stages: Vec<GraStage>,
    width: usize,
}

fn conv(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    name: &str,
    co: usize,
    ci: usize,
    k: usize,
) -> ConvP {
    let std = (2.0 / (ci * k * k) as f64).sqrt();
    let data: Vec<f64> = (0..co * ci * k * k).map(|_| trunc_normal(rng, std)).collect();
    ConvP {
        w: store.add(format!("{name}.w"), Tensor::new(vec![co, ci, k, k], data).unwrap()),
        b: store.add(format!("{name}.b"), Tensor::zeros(&[co])),
    }
}

impl Decoder {
    /// `level_channels` are the encoder side-out widths, finest first;
    /// `width` is the shared decoder channel count (the texture-enhanced /
    /// attention channel count).
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        prefix: &str,
        level_channels: &[usize],
        width: usize,
    ) -> Self {
        let reduce = level_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| conv(store, rng, &format!("{prefix}.reduce{i}"), width, c, 1))
            .collect();
        let fuse = conv(store, rng, &format!("{prefix}.fuse"), width, 4 * width, 3);
        let fuse_head = conv(store, rng, &format!("{prefix}.fuse_head"), 1, width, 3);
        let stages = (0..level_channels.len())
            .map(|i| GraStage {
                narrow: conv(store, rng, &format!("{prefix}.gra{i}.narrow"), width / 2, width, 3),
                head: conv(store, rng, &format!("{prefix}.gra{i}.head"), 1, width / 2, 3),
            })
            .collect();
        Decoder { reduce, fuse, fuse_head, stages, width }
    }

    fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p: &ConvP,
        x: Var,
        k: usize,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let batched = if s.len() == 3 {
            let mut b = vec![1];
            b.extend_from_slice(&s);
            tape.reshape(x, &b)?
        } else {
            x
        };
        let w = tape.param(store, p.w);
        let b = tape.param(store, p.b);
        let out = tape.conv2d(batched, w, Some(b), 1, 1, k / 2, PadMode::Zero)?;
        let os = tape.shape(out).to_vec();
        if s.len() == 3 {
            tape.reshape(out, &os[1..])
        } else {
            Ok(out)
        }
    }

    /// `1 - sigmoid(map)`: the reverse-attention gate.
    fn reverse_gate(tape: &mut Tape, map: Var) -> Result<Var> {
        let s = tape.sigmoid(map)?;
        let n = tape.scale(s, -1.0)?;
        tape.add_scalar(n, 1.0)
    }

    /// Runs the decoder on one frame's pyramid plus its attention output
    /// `z` (shape equal to `pyr.top`), producing the native-resolution maps
    /// coarsest first, together with the per-stage upsampled-previous maps
    /// and residuals (index i of those belongs to native map i+1).
    fn run_stages(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pyr: &PyramidFeatures,
        z: Var,
    ) -> Result<(Vec<Var>, Vec<Var>, Vec<Var>)> {
        if pyr.levels.len() != self.stages.len() {
            return Err(TensorError::Invalid(format!(
                "decoder built for {} levels, pyramid has {}",
                self.stages.len(),
                pyr.levels.len()
            )));
        }
        if tape.shape(z) != tape.shape(pyr.top) {
            return Err(TensorError::ShapeMismatch {
                op: "decode",
                lhs: tape.shape(z).to_vec(),
                rhs: tape.shape(pyr.top).to_vec(),
            });
        }
        // Reduce every side-out to the decoder width.
        let mut reduced = Vec::with_capacity(pyr.levels.len());
        for (p, &lvl) in self.reduce.iter().zip(&pyr.levels) {
            let r = self.apply(tape, store, p, lvl, 1)?;
            reduced.push(tape.relu(r)?);
        }

        // Neighbor fusion of the three coarsest inputs: z, the enhanced
        // top, and the reduced coarsest side-out, all at top resolution.
        // The product carries agreement, the raw maps keep the difference
        // signal (which is what separates a moving object from a static
        // lookalike).
        let coarsest = *reduced.last().unwrap();
        let prod = tape.mul(z, pyr.top)?;
        let cat = tape.concat(prod, z, 0)?;
        let cat = tape.concat(cat, pyr.top, 0)?;
        let cat = tape.concat(cat, coarsest, 0)?;
        let fused = self.apply(tape, store, &self.fuse, cat, 3)?;
        let fused = tape.relu(fused)?;
        let coarse_map = self.apply(tape, store, &self.fuse_head, fused, 3)?;

        // Refinement: coarsest feature is the enhanced top, then the
        // reduced side-outs walking toward full resolution.
        let mut features: Vec<Var> = vec![pyr.top];
        for &r in reduced[..reduced.len() - 1].iter().rev() {
            features.push(r);
        }

        let mut native = vec![coarse_map];
        let mut ups = Vec::new();
        let mut residuals = Vec::new();
        let mut prev = coarse_map;
        for (stage, &feat) in self.stages.iter().zip(&features) {
            let fs = tape.shape(feat).to_vec();
            let up = tape.upsample_bilinear(prev, fs[1], fs[2])?;
            let gate = Self::reverse_gate(tape, up)?;
            let gated = tape.mul_chan(feat, gate)?;
            let narrow = self.apply(tape, store, &stage.narrow, gated, 3)?;
            let narrow = tape.relu(narrow)?;
            let residual = self.apply(tape, store, &stage.head, narrow, 3)?;
            let refined = tape.add(up, residual)?;
            native.push(refined);
            ups.push(up);
            residuals.push(residual);
            prev = refined;
        }
        Ok((native, ups, residuals))
    }

    /// Decodes one frame into four deeply-supervised logit maps at the
    /// requested output resolution, coarsest first.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        pyr: &PyramidFeatures,
        z: Var,
        out_hw: (usize, usize),
        role: FrameRole,
    ) -> Result<PredictionSet> {
        let (native, _, _) = self.run_stages(tape, store, pyr, z)?;
        let mut maps = Vec::with_capacity(native.len());
        for m in native {
            maps.push(tape.upsample_bilinear(m, out_hw.0, out_hw.1)?);
        }
        Ok(PredictionSet { maps, role })
    }

    pub fn width(&self) -> usize {
        self.width
    }
}
