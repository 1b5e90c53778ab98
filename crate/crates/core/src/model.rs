//! The assembled network: encoder(s) → mixture attention → parallel
//! decoders, plus checkpointing and analytic parameter/FLOP counts.
//!
//! Ablation toggles live here: with `siamese` off the two frames go
//! through twin independently-initialized encoders; with
//! `mixture_attention` off the texture-enhanced top levels pass straight
//! to the decoders.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{default_patch, MixtureAttention};
use crate::data::FramePair;
use crate::decoder::{Decoder, FrameRole, PredictionSet};
use crate::encoder::{EncoderConfig, SiameseEncoder};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::rng::SeedTree;
use crate::tape::{sigmoid_scalar, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Architecture description; everything a checkpoint needs to rebuild the
/// network skeleton.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub resolution: usize,
    pub stage_channels: Vec<usize>,
    pub window: usize,
    pub enhanced_channels: usize,
    /// 0 selects the default (half the top-level extent).
    pub patch: usize,
    pub lambda: f64,
    pub siamese: bool,
    pub mixture_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            resolution: 64,
            stage_channels: vec![16, 32, 64],
            window: 4,
            enhanced_channels: 32,
            patch: 0,
            lambda: 0.7,
            siamese: true,
            mixture_attention: true,
        }
    }
}

impl ModelConfig {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            in_channels: 3,
            stage_channels: self.stage_channels.clone(),
            window: self.window,
            enhanced_channels: self.enhanced_channels,
        }
    }

    pub fn total_stride(&self) -> usize {
        1 << self.stage_channels.len()
    }

    pub fn top_extent(&self) -> usize {
        self.resolution / self.total_stride()
    }

    pub fn effective_patch(&self) -> usize {
        if self.patch == 0 {
            default_patch(self.top_extent())
        } else {
            self.patch
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution % self.total_stride() != 0 || self.top_extent() == 0 {
            return Err(TensorError::Invalid(format!(
                "resolution {} must be a positive multiple of the total stride {}",
                self.resolution,
                self.total_stride()
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TensorError::Invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.top_extent() % self.effective_patch() != 0 {
            return Err(TensorError::Invalid(format!(
                "patch {} must divide the top extent {}",
                self.effective_patch(),
                self.top_extent()
            )));
        }
        Ok(())
    }
}

pub struct Network {
    cfg: ModelConfig,
    encoder: SiameseEncoder,
    /// Second encoder for the reference frame when weight sharing is off.
    twin_encoder: Option<SiameseEncoder>,
    attention: Option<MixtureAttention>,
    decoder: Decoder,
}

impl Network {
    /// Builds the network and registers every parameter. All weights draw
    /// from substreams of `seed`, so the same seed reproduces the same
    /// initialization regardless of which ablation flags are set.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<(Network, ParamStore)> {
        cfg.validate()?;
        let tree = SeedTree::new(seed);
        let mut store = ParamStore::new();
        let enc_cfg = cfg.encoder_config();
        let mut rng = tree.stream("init.encoder");
        let encoder = SiameseEncoder::init(&mut store, &mut rng, "enc", &enc_cfg);
        let twin_encoder = if cfg.siamese {
            None
        } else {
            let mut rng = tree.stream("init.encoder_twin");
            Some(SiameseEncoder::init(&mut store, &mut rng, "enc_twin", &enc_cfg))
        };
        let attention = if cfg.mixture_attention {
            let mut rng = tree.stream("init.attention");
            let top = cfg.top_extent();
            Some(MixtureAttention::init(
                &mut store,
                &mut rng,
                "ma",
                cfg.enhanced_channels,
                top,
                top,
                cfg.effective_patch(),
            )?)
        } else {
            None
        };
        let mut rng = tree.stream("init.decoder");
        let decoder = Decoder::init(&mut store, &mut rng, "dec", &cfg.stage_channels, cfg.enhanced_channels);
        Ok((Network { cfg: cfg.clone(), encoder, twin_encoder, attention, decoder }, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Forward pass of one pair; returns the two deeply-supervised
    /// prediction sets (anchor, reference) as tape handles.
    pub fn forward_pair(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        anchor: Var,
        reference: Var,
    ) -> Result<(PredictionSet, PredictionSet)> {
        let (pyr_a, pyr_r) = match &self.twin_encoder {
            None => self.encoder.encode_pair(tape, store, anchor, reference)?,
            Some(twin) => (
                self.encoder.encode_single(tape, store, anchor)?,
                twin.encode_single(tape, store, reference)?,
            ),
        };
        let (z_a, z_r) = match &self.attention {
            Some(ma) => ma.forward(tape, store, pyr_a.top, pyr_r.top, self.cfg.lambda)?,
            None => (pyr_a.top, pyr_r.top),
        };
        let res = (self.cfg.resolution, self.cfg.resolution);
        let preds_a = self.decoder.decode(tape, store, &pyr_a, z_a, res, FrameRole::Anchor)?;
        let preds_r = self.decoder.decode(tape, store, &pyr_r, z_r, res, FrameRole::Reference)?;
        Ok((preds_a, preds_r))
    }

    /// Inference: probability maps (sigmoid of the finest logits) for both
    /// frames of a pair.
    pub fn predict_pair(&self, store: &ParamStore, pair: &FramePair) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let a = tape.constant(pair.anchor.clone());
        let r = tape.constant(pair.reference.clone());
        let (pa, pr) = self.forward_pair(&mut tape, store, a, r)?;
        let to_prob = |tape: &Tape, v: Var| -> Tensor {
            let t = tape.value(v);
            let hw = &t.shape()[1..];
            Tensor::new(
                hw.to_vec(),
                t.data().iter().map(|&l| sigmoid_scalar(l)).collect(),
            )
            .expect("map shape")
        };
        let map_a = to_prob(&tape, pa.finest());
        let map_r = to_prob(&tape, pr.finest());
        Ok((map_a, map_r))
    }

    // ── analytic cost model ────────────────────────────────────────────

    /// Analytic parameter and forward-FLOP counts for one frame pair at
    /// the configured resolution (multiply-accumulate = 2 FLOPs).
    pub fn count_params_flops(&self, store: &ParamStore) -> (usize, u64) {
        (store.total_len(), self.count_flops())
    }

    fn count_flops(&self) -> u64 {
        let cfg = &self.cfg;
        let frames = 2u64;
        let mut flops = 0u64;

        // Encoder (per frame; the Siamese batch and the twin path cost the
        // same in total).
        let mut h = cfg.resolution as u64;
        let mut c_in = 3u64;
        for &c in &cfg.stage_channels {
            let c = c as u64;
            h /= 2;
            let hw = h * h;
            flops += frames * conv_flops(c_in, c, 3, hw);
            flops += frames * 8 * c * hw * 2; // the two layernorms
            flops += frames * 3 * conv_flops(c, c, 1, hw); // qkv
            let ws = (cfg.window as u64).min(h);
            let tokens = ws * ws;
            let windows = hw / tokens;
            // QKᵀ and SV per window, plus the softmax.
            flops += frames * windows * (2 * 2 * tokens * tokens * c + 5 * tokens * tokens);
            flops += frames * conv_flops(c, c, 1, hw); // proj
            flops += frames * (conv_flops(c, 2 * c, 1, hw) + conv_flops(2 * c, c, 1, hw));
            c_in = c;
        }
        let ce = cfg.enhanced_channels as u64;
        let top_hw = h * h;

        // Texture enhancement.
        flops += frames
            * (4 * conv_flops(c_in, ce, 1, top_hw)
                + 3 * conv_flops(ce, ce, 3, top_hw)
                + conv_flops(4 * ce, ce, 1, top_hw)
                + conv_flops(c_in, ce, 1, top_hw));

        // Mixture attention.
        if cfg.mixture_attention {
            let p2 = (cfg.effective_patch() * cfg.effective_patch()) as u64;
            let n = top_hw / p2;
            let nc = n * ce;
            flops += frames * 2 * p2 * p2 * nc; // projection
            flops += 2 * (2 * nc) * (2 * nc) * p2; // joint attention matrix
            flops += 3 * 5 * nc * nc; // block softmaxes
            flops += 4 * 2 * p2 * nc * nc; // four enhancements
            flops += frames * conv_flops(ce, ce, 1, top_hw); // reconcile
        }

        // Decoder (per frame).
        let mut lvl_hw: Vec<u64> = Vec::new();
        let mut hh = cfg.resolution as u64;
        for _ in &cfg.stage_channels {
            hh /= 2;
            lvl_hw.push(hh * hh);
        }
        for (i, &c) in cfg.stage_channels.iter().enumerate() {
            flops += frames * conv_flops(c as u64, ce, 1, lvl_hw[i]);
        }
        flops += frames * (conv_flops(4 * ce, ce, 3, top_hw) + conv_flops(ce, 1, 3, top_hw));
        // Refinement stages at top, then walking back up.
        let stage_hw = [top_hw, lvl_hw[lvl_hw.len() - 2], lvl_hw[lvl_hw.len() - 3]];
        for &shw in &stage_hw {
            flops += frames * (conv_flops(ce, ce / 2, 3, shw) + conv_flops(ce / 2, 1, 3, shw));
            flops += frames * 8 * shw; // upsample + gate
        }
        let out_hw = (cfg.resolution * cfg.resolution) as u64;
        flops += frames * 4 * 8 * out_hw; // final upsamples
        flops
    }
}

fn conv_flops(ci: u64, co: u64, k: u64, out_hw: u64) -> u64 {
    2 * ci * co * k * k * out_hw
}

/// Parameter count of a dense `m → n` layer with bias.
pub fn dense_params(m: usize, n: usize) -> usize {
    m * n + n
}

// ── checkpoints ─────────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 4] = b"MCKP";
const CKPT_VERSION: u32 = 1;

/// JSON manifest stored next to the binary tensor map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ModelConfig,
    pub config_hash: String,
    pub epoch: usize,
    pub best_dice: f64,
    pub param_count: usize,
}

/// Writes `<base>.ckpt` (named tensor map + optional optimizer state) and
/// `<base>.json` (manifest).
pub fn save_checkpoint(
    base: &Path,
    store: &ParamStore,
    meta: &CheckpointMeta,
    adam: Option<&AdamState>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(base.with_extension("ckpt"))?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    store.write_to(&mut w)?;
    match adam {
        Some(state) => {
            w.write_all(&[1u8])?;
            state.write_to(&mut w)?;
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| TensorError::Invalid(format!("manifest: {e}")))?;
    std::fs::write(base.with_extension("json"), json)?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<(ParamStore, Option<AdamState>, CheckpointMeta)> {
    let mut r = BufReader::new(File::open(base.with_extension("ckpt"))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(TensorError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CKPT_VERSION {
        return Err(TensorError::BadVersion(version));
    }
    let store = ParamStore::read_from(&mut r)?;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let adam = if flag[0] == 1 { Some(AdamState::read_from(&mut r)?) } else { None };
    let meta: CheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(base.with_extension("json"))?,
    )
    .map_err(|e| TensorError::Invalid(format!("manifest: {e}")))?;
    Ok((store, adam, meta))
}

/// Rebuilds a network from a checkpoint: fresh skeleton from the manifest
/// architecture, values overwritten from the tensor map.
pub fn load_network(base: &Path) -> Result<(Network, ParamStore, CheckpointMeta)> {
    let (loaded, _, meta) = load_checkpoint(base)?;
    let (net, mut store) = Network::init(&meta.arch, 0)?;
    store.load_values_from(&loaded)?;
    Ok((net, store, meta))
}
