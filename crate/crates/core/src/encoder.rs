//! Siamese pyramid transformer encoder.
//!
//! Both frames of a pair are stacked into one batch, pushed through a
//! 3-stage pyramid (strided patch-merging convolution, then a windowed
//! self-attention block with layernorm and MLP per stage), and split back
//! apart — the weight sharing is literal, not replicated. The coarsest
//! side-out additionally passes through a texture enhancement block with
//! parallel dilated branches before it reaches attention and decoding.

use rand_chacha::ChaCha12Rng;

use crate::params::{ParamId, ParamStore};
use crate::rng::trunc_normal;
use crate::tape::{PadMode, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Encoder hyperparameters; spatial extents halve per stage.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub stage_channels: Vec<usize>,
    /// Self-attention window (clamped to the stage extent when larger).
    pub window: usize,
    /// Channel count of the texture-enhanced top level.
    pub enhanced_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            stage_channels: vec![16, 32, 64],
            window: 4,
            enhanced_channels: 32,
        }
    }
}

impl EncoderConfig {
    /// Product of the per-stage strides (2 each).
    pub fn total_stride(&self) -> usize {
        1 << self.stage_channels.len()
    }
}

/// Per-frame multi-level features: raw side-outs plus the texture-enhanced
/// top level.
pub struct PyramidFeatures {
    /// Coarsest last; level i has half the spatial extent of level i-1.
    pub levels: Vec<Var>,
    /// Texture-enhanced coarsest level, `[enhanced_channels, h, w]`.
    pub top: Var,
}

// ── parameter blocks ────────────────────────────────────────────────────

struct ConvParams {
    w: ParamId,
    b: ParamId,
}

struct NormParams {
    gamma: ParamId,
    beta: ParamId,
}

struct StageParams {
    merge: ConvParams,
    merge_norm: NormParams,
    attn_norm: NormParams,
    q: ConvParams,
    k: ConvParams,
    v: ConvParams,
    proj: ConvParams,
    mlp_norm: NormParams,
    mlp_in: ConvParams,
    mlp_out: ConvParams,
    channels: usize,
}

struct TemParams {
    direct: ConvParams,
    branch_reduce: [ConvParams; 3],
    branch_dilated: [ConvParams; 3],
    merge: ConvParams,
    shortcut: ConvParams,
}

pub struct SiameseEncoder {
    stages: Vec<StageParams>,
    tem: TemParams,
    cfg: EncoderConfig,
}

fn init_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    name: &str,
    co: usize,
    ci: usize,
    k: usize,
    std: f64,
) -> ConvParams {
    let n = co * ci * k * k;
    let data: Vec<f64> = (0..n).map(|_| trunc_normal(rng, std)).collect();
    let w = store.add(format!("{name}.w"), Tensor::new(vec![co, ci, k, k], data).unwrap());
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[co]));
    ConvParams { w, b }
}

/// He-style std for general convolutions; projections use 0.02 instead.
fn he_std(ci: usize, k: usize) -> f64 {
    (2.0 / (ci * k * k) as f64).sqrt()
}

fn init_norm(store: &mut ParamStore, name: &str, c: usize) -> NormParams {
    let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
    let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[c]));
    NormParams { gamma, beta }
}

impl SiameseEncoder {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha12Rng, prefix: &str, cfg: &EncoderConfig) -> Self {
        let mut stages = Vec::new();
        let mut c_in = cfg.in_channels;
        for (i, &c) in cfg.stage_channels.iter().enumerate() {
            let p = format!("{prefix}.stage{i}");
            stages.push(StageParams {
                merge: init_conv(store, rng, &format!("{p}.merge"), c, c_in, 3, he_std(c_in, 3)),
                merge_norm: init_norm(store, &format!("{p}.merge_norm"), c),
                attn_norm: init_norm(store, &format!("{p}.attn_norm"), c),
                q: init_conv(store, rng, &format!("{p}.q"), c, c, 1, 0.02),
                k: init_conv(store, rng, &format!("{p}.k"), c, c, 1, 0.02),
                v: init_conv(store, rng, &format!("{p}.v"), c, c, 1, 0.02),
                proj: init_conv(store, rng, &format!("{p}.proj"), c, c, 1, 0.02),
                mlp_norm: init_norm(store, &format!("{p}.mlp_norm"), c),
                mlp_in: init_conv(store, rng, &format!("{p}.mlp_in"), 2 * c, c, 1, 0.02),
                mlp_out: init_conv(store, rng, &format!("{p}.mlp_out"), c, 2 * c, 1, 0.02),
                channels: c,
            });
            c_in = c;
        }
        let ce = cfg.enhanced_channels;
        let tp = format!("{prefix}.tem");
        let tem = TemParams {
            direct: init_conv(store, rng, &format!("{tp}.direct"), ce, c_in, 1, he_std(c_in, 1)),
            branch_reduce: [
                init_conv(store, rng, &format!("{tp}.b1.reduce"), ce, c_in, 1, he_std(c_in, 1)),
                init_conv(store, rng, &format!("{tp}.b2.reduce"), ce, c_in, 1, he_std(c_in, 1)),
                init_conv(store, rng, &format!("{tp}.b3.reduce"), ce, c_in, 1, he_std(c_in, 1)),
            ],
            branch_dilated: [
                init_conv(store, rng, &format!("{tp}.b1.dilated"), ce, ce, 3, he_std(ce, 3)),
                init_conv(store, rng, &format!("{tp}.b2.dilated"), ce, ce, 3, he_std(ce, 3)),
                init_conv(store, rng, &format!("{tp}.b3.dilated"), ce, ce, 3, he_std(ce, 3)),
            ],
            merge: init_conv(store, rng, &format!("{tp}.merge"), ce, 4 * ce, 1, he_std(4 * ce, 1)),
            shortcut: init_conv(store, rng, &format!("{tp}.shortcut"), ce, c_in, 1, he_std(c_in, 1)),
        };
        SiameseEncoder { stages, tem, cfg: cfg.clone() }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Stacks the anchor (batch index 0) and reference (batch index 1)
    /// frames. The ordering is part of the contract: `batch_split` returns
    /// (anchor, reference).
    pub fn batch_form(tape: &mut Tape, anchor: Var, reference: Var) -> Result<Var> {
        if tape.shape(anchor).len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "batch_form",
                shape: tape.shape(anchor).to_vec(),
                reason: "expected [channels, h, w] frames".into(),
            });
        }
        tape.stack_pair(anchor, reference)
    }

    /// Inverse of `batch_form`: (anchor features, reference features).
    pub fn batch_split(tape: &mut Tape, feat: Var) -> Result<(Var, Var)> {
        tape.unstack_pair(feat)
    }

    /// Runs the pyramid on a `[n, 3, h, w]` batch and returns the side-out
    /// features of every stage, coarsest last.
    pub fn transformer_forward(&self, tape: &mut Tape, store: &ParamStore, batch: Var) -> Result<Vec<Var>> {
        let s = tape.shape(batch).to_vec();
        let stride = self.cfg.total_stride();
        if s.len() != 4 || s[2] % stride != 0 || s[3] % stride != 0 {
            return Err(TensorError::InvalidShape {
                op: "transformer_forward",
                shape: s,
                reason: format!("spatial extents must be divisible by {stride}"),
            });
        }
        let mut x = batch;
        let mut outs = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            x = self.stage_forward(tape, store, st, x)?;
            outs.push(x);
        }
        Ok(outs)
    }

    fn conv1x1(&self, tape: &mut Tape, store: &ParamStore, p: &ConvParams, x: Var) -> Result<Var> {
        let w = tape.param(store, p.w);
        let b = tape.param(store, p.b);
        tape.conv2d(x, w, Some(b), 1, 1, 0, PadMode::Zero)
    }

    fn norm(&self, tape: &mut Tape, store: &ParamStore, p: &NormParams, x: Var) -> Result<Var> {
        let g = tape.param(store, p.gamma);
        let b = tape.param(store, p.beta);
        tape.layernorm(x, g, b, 1)
    }

    fn stage_forward(&self, tape: &mut Tape, store: &ParamStore, st: &StageParams, x: Var) -> Result<Var> {
        // Patch merging: overlap-3 convolution at stride 2, then norm.
        let w = tape.param(store, st.merge.w);
        let b = tape.param(store, st.merge.b);
        let merged = tape.conv2d(x, w, Some(b), 2, 1, 1, PadMode::Zero)?;
        let mut x = self.norm(tape, store, &st.merge_norm, merged)?;

        // Windowed self-attention with a residual connection.
        let t = self.norm(tape, store, &st.attn_norm, x)?;
        let q = self.conv1x1(tape, store, &st.q, t)?;
        let k = self.conv1x1(tape, store, &st.k, t)?;
        let v = self.conv1x1(tape, store, &st.v, t)?;
        let mixed = self.windowed_attention(tape, q, k, v, st.channels)?;
        let proj = self.conv1x1(tape, store, &st.proj, mixed)?;
        x = tape.add(x, proj)?;

        // Per-position MLP with a residual connection.
        let t = self.norm(tape, store, &st.mlp_norm, x)?;
        let h = self.conv1x1(tape, store, &st.mlp_in, t)?;
        let h = tape.relu(h)?;
        let h = self.conv1x1(tape, store, &st.mlp_out, h)?;
        tape.add(x, h)
    }

    /// Attention within square windows; tokens only mix inside a window, so
    /// the two batch elements never interact (the Siamese property rests on
    /// weight sharing, not feature mixing).
    fn windowed_attention(&self, tape: &mut Tape, q: Var, k: Var, v: Var, c: usize) -> Result<Var> {
        let s = tape.shape(q).to_vec();
        let (n, h, w) = (s[0], s[2], s[3]);
        let ws = self.cfg.window.min(h).min(w);
        if h % ws != 0 || w % ws != 0 {
            return Err(TensorError::InvalidShape {
                op: "windowed_attention",
                shape: s,
                reason: format!("window {ws} must tile the feature map"),
            });
        }
        let scale = 1.0 / (c as f64).sqrt();
        let mut batch_outs = Vec::with_capacity(n);
        for bn in 0..n {
            let frame = |tape: &mut Tape, src: Var| -> Result<Var> {
                let sl = tape.slice(src, 0, bn, 1)?;
                tape.reshape(sl, &[c, h, w])
            };
            let qf = frame(tape, q)?;
            let kf = frame(tape, k)?;
            let vf = frame(tape, v)?;
            let mut rows = Vec::with_capacity(h / ws);
            for wy in 0..h / ws {
                let mut cols = Vec::with_capacity(w / ws);
                for wx in 0..w / ws {
                    let window = |tape: &mut Tape, src: Var| -> Result<Var> {
                        let r = tape.slice(src, 1, wy * ws, ws)?;
                        let rc = tape.slice(r, 2, wx * ws, ws)?;
                        let flat = tape.reshape(rc, &[c, ws * ws])?;
                        tape.transpose(flat) // [tokens, c]
                    };
                    let qt = window(tape, qf)?;
                    let kt = window(tape, kf)?;
                    let vt = window(tape, vf)?;
                    let kt_t = tape.transpose(kt)?;
                    let logits = tape.matmul(qt, kt_t)?;
                    let logits = tape.scale(logits, scale)?;
                    let weights = tape.softmax(logits, 1)?;
                    let out = tape.matmul(weights, vt)?;
                    let out_t = tape.transpose(out)?;
                    cols.push(tape.reshape(out_t, &[c, ws, ws])?);
                }
                let mut row = cols[0];
                for &cv in &cols[1..] {
                    row = tape.concat(row, cv, 2)?;
                }
                rows.push(row);
            }
            let mut plane = rows[0];
            for &rv in &rows[1..] {
                plane = tape.concat(plane, rv, 1)?;
            }
            batch_outs.push(tape.reshape(plane, &[1, c, h, w])?);
        }
        let mut out = batch_outs[0];
        for &bv in &batch_outs[1..] {
            out = tape.concat(out, bv, 0)?;
        }
        Ok(out)
    }

    /// Texture enhancement on one frame's coarsest side-out
    /// `[c_top, h, w] -> [enhanced_channels, h, w]`: a direct 1×1 branch,
    /// three 1×1→3×3 branches at dilations 1/3/5, a 1×1 merge of the
    /// concatenation, and a 1×1 shortcut, finished by relu.
    pub fn tem_forward(&self, tape: &mut Tape, store: &ParamStore, f: Var) -> Result<Var> {
        let s = tape.shape(f).to_vec();
        if s.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "tem_forward",
                shape: s,
                reason: "expected a per-frame [c, h, w] feature map".into(),
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let x = tape.reshape(f, &[1, c, h, w])?;

        let mut branches = vec![self.conv1x1(tape, store, &self.tem.direct, x)?];
        for (i, dilation) in [1usize, 3, 5].iter().enumerate() {
            let reduced = self.conv1x1(tape, store, &self.tem.branch_reduce[i], x)?;
            let dw = tape.param(store, self.tem.branch_dilated[i].w);
            let db = tape.param(store, self.tem.branch_dilated[i].b);
            branches.push(tape.conv2d(reduced, dw, Some(db), 1, *dilation, *dilation, PadMode::Zero)?);
        }
        let mut cat = branches[0];
        for &b in &branches[1..] {
            cat = tape.concat(cat, b, 1)?;
        }
        let merged = self.conv1x1(tape, store, &self.tem.merge, cat)?;
        let shortcut = self.conv1x1(tape, store, &self.tem.shortcut, x)?;
        let sum = tape.add(merged, shortcut)?;
        let out = tape.relu(sum)?;
        tape.reshape(out, &[self.cfg.enhanced_channels, h, w])
    }

    /// Full Siamese encoding of a frame pair: batch, pyramid, split, and
    /// texture-enhance the coarsest level of each frame.
    pub fn encode_pair(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        anchor: Var,
        reference: Var,
    ) -> Result<(PyramidFeatures, PyramidFeatures)> {
        let batch = Self::batch_form(tape, anchor, reference)?;
        let side_outs = self.transformer_forward(tape, store, batch)?;
        let mut levels_a = Vec::new();
        let mut levels_r = Vec::new();
        for &so in &side_outs {
            let (fa, fr) = Self::batch_split(tape, so)?;
            levels_a.push(fa);
            levels_r.push(fr);
        }
        let top_a = self.tem_forward(tape, store, *levels_a.last().unwrap())?;
        let top_r = self.tem_forward(tape, store, *levels_r.last().unwrap())?;
        Ok((
            PyramidFeatures { levels: levels_a, top: top_a },
            PyramidFeatures { levels: levels_r, top: top_r },
        ))
    }

    /// Single-frame encoding (used by the non-Siamese ablation, which owns
    /// two independent encoders).
    pub fn encode_single(&self, tape: &mut Tape, store: &ParamStore, frame: Var) -> Result<PyramidFeatures> {
        let s = tape.shape(frame).to_vec();
        let mut shape = vec![1];
        shape.extend_from_slice(&s);
        let batch = tape.reshape(frame, &shape)?;
        let side_outs = self.transformer_forward(tape, store, batch)?;
        let mut levels = Vec::new();
        for &so in &side_outs {
            let os = tape.shape(so).to_vec();
            levels.push(tape.reshape(so, &os[1..])?);
        }
        let top = self.tem_forward(tape, store, *levels.last().unwrap())?;
        Ok(PyramidFeatures { levels, top })
    }
}
