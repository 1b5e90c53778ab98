//! Data pipeline: synthetic clip generation, clip-directory ingestion
//! (`<root>/<clip>/Frame`, `<root>/<clip>/GT`), and the (t, t−Δ)
//! frame-pair sampler.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use rand::Rng;
use thiserror::Error;

use crate::rng::{shuffle, SeedTree};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data root {0} is not a directory")]
    BadRoot(PathBuf),
    #[error("clip {clip}: missing mask for frame {frame}")]
    MissingMask { clip: String, frame: String },
    #[error("clip {clip}: {frames} frames but {masks} masks")]
    CountMismatch { clip: String, frames: usize, masks: usize },
    #[error("unreadable image {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },
    #[error("clip {clip}: frame extents differ ({0}x{1} vs {2}x{3})", .first.0, .first.1, .got.0, .got.1)]
    MixedExtents { clip: String, first: (usize, usize), got: (usize, usize) },
    #[error("clip {clip} has {len} frames, too short for delta {delta}")]
    TooShort { clip: String, len: usize, delta: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB frame, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
}

/// Binary mask, one byte per pixel, values 0/1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<u8>,
}

impl Mask {
    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }
}

/// An ordered clip of frames with parallel masks.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub frames: Vec<Frame>,
    pub masks: Vec<Mask>,
    /// Informational only.
    pub fps: f64,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn extents(&self) -> (usize, usize) {
        self.frames
            .first()
            .map(|f| (f.height, f.width))
            .unwrap_or((0, 0))
    }
}

/// An anchor frame at t = T with its reference at t = T − Δ, as training
/// tensors: RGB in [0, 1], masks strictly binary.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub anchor: Tensor,
    pub reference: Tensor,
    pub anchor_mask: Tensor,
    pub reference_mask: Tensor,
    pub t_anchor: usize,
    pub t_reference: usize,
}

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    /// Frame-index gap between anchor and reference.
    pub delta: usize,
    /// When set, pair order is shuffled by this seed; otherwise in anchor
    /// order (evaluation).
    pub shuffle_seed: Option<u64>,
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { delta: 2, shuffle_seed: None, batch_size: 2 }
    }
}

// ── tensor conversion ───────────────────────────────────────────────────

pub fn frame_to_tensor(f: &Frame) -> Tensor {
    let (h, w) = (f.height, f.width);
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = f.rgb[p * 3 + c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("frame extents")
}

pub fn mask_to_tensor(m: &Mask) -> Tensor {
    let data = m.bits.iter().map(|&b| if b != 0 { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![1, m.height, m.width], data).expect("mask extents")
}

/// Bilinear resize of a `[c, h, w]` tensor (half-pixel centers). Used when
/// a dataset's native extents differ from the configured input size.
pub fn resize_bilinear_chw(t: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if (h, w) == (oh, ow) {
        return t.clone();
    }
    let (sh, sw) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let axis = |o: usize, scale: f64, extent: usize| -> (usize, usize, f64) {
        let src = (o as f64 + 0.5) * scale - 0.5;
        let f = src.floor();
        let t = src - f;
        let i0 = (f as isize).clamp(0, extent as isize - 1) as usize;
        let i1 = (f as isize + 1).clamp(0, extent as isize - 1) as usize;
        (i0, i1, t)
    };
    let d = t.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let (y0, y1, ty) = axis(oy, sh, h);
            for ox in 0..ow {
                let (x0, x1, tx) = axis(ox, sw, w);
                out[ch * oh * ow + oy * ow + ox] = (1.0 - ty) * (1.0 - tx) * d[ch * h * w + y0 * w + x0]
                    + (1.0 - ty) * tx * d[ch * h * w + y0 * w + x1]
                    + ty * (1.0 - tx) * d[ch * h * w + y1 * w + x0]
                    + ty * tx * d[ch * h * w + y1 * w + x1];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("resize shape")
}

/// Nearest-neighbor resize for masks: values stay strictly binary.
pub fn resize_nearest_chw(t: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if (h, w) == (oh, ow) {
        return t.clone();
    }
    let d = t.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64) as usize;
            let sy = sy.min(h - 1);
            for ox in 0..ow {
                let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64) as usize;
                let sx = sx.min(w - 1);
                out[ch * oh * ow + oy * ow + ox] = d[ch * h * w + sy * w + sx];
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("resize shape")
}

/// Mirrors a `[c, h, w]` tensor left-right.
pub fn hflip_chw(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let d = t.data();
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                out[ch * h * w + r * w + col] = d[ch * h * w + r * w + (w - 1 - col)];
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("same shape")
}

impl FramePair {
    /// Returns the pair resized to `res × res` (bilinear frames, nearest
    /// masks); a no-op when extents already match.
    pub fn at_resolution(&self, res: usize) -> FramePair {
        FramePair {
            anchor: resize_bilinear_chw(&self.anchor, res, res),
            reference: resize_bilinear_chw(&self.reference, res, res),
            anchor_mask: resize_nearest_chw(&self.anchor_mask, res, res),
            reference_mask: resize_nearest_chw(&self.reference_mask, res, res),
            t_anchor: self.t_anchor,
            t_reference: self.t_reference,
        }
    }

    /// Horizontal-flip augmentation applied consistently to both frames
    /// and masks.
    pub fn hflipped(&self) -> FramePair {
        FramePair {
            anchor: hflip_chw(&self.anchor),
            reference: hflip_chw(&self.reference),
            anchor_mask: hflip_chw(&self.anchor_mask),
            reference_mask: hflip_chw(&self.reference_mask),
            t_anchor: self.t_anchor,
            t_reference: self.t_reference,
        }
    }
}

// ── sampler ─────────────────────────────────────────────────────────────

/// One pair per valid anchor index T ∈ [Δ, len). Training order is
/// shuffled by the configured seed; evaluation order is ascending T.
pub fn sample_pairs(clip: &VideoClip, cfg: &SamplerConfig) -> Result<Vec<FramePair>, DataError> {
    if clip.len() <= cfg.delta {
        return Err(DataError::TooShort {
            clip: clip.clip_id.clone(),
            len: clip.len(),
            delta: cfg.delta,
        });
    }
    let mut anchors: Vec<usize> = (cfg.delta..clip.len()).collect();
    if let Some(seed) = cfg.shuffle_seed {
        let mut rng = SeedTree::new(seed).stream_indexed("pair_shuffle", 0);
        shuffle(&mut rng, &mut anchors);
    }
    Ok(anchors
        .into_iter()
        .map(|t| FramePair {
            anchor: frame_to_tensor(&clip.frames[t]),
            reference: frame_to_tensor(&clip.frames[t - cfg.delta]),
            anchor_mask: mask_to_tensor(&clip.masks[t]),
            reference_mask: mask_to_tensor(&clip.masks[t - cfg.delta]),
            t_anchor: t,
            t_reference: t - cfg.delta,
        })
        .collect())
}

/// Anchor indices only — used where materializing tensors up front would
/// be wasteful.
pub fn pair_indices(len: usize, delta: usize) -> Vec<(usize, usize)> {
    (delta..len).map(|t| (t, t - delta)).collect()
}

// ── synthetic generation ────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl std::str::FromStr for Difficulty {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty {other}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub difficulty: Difficulty,
    /// Upper bound on per-frame center displacement, in pixels.
    pub max_speed: f64,
    /// Static polyp lookalikes, rendered exactly like polyps but excluded
    /// from the mask. Indistinguishable in a single frame; only motion
    /// across the pair separates them from the real thing.
    pub distractors: usize,
    /// Upper bound on moving polyps per clip (1 or 2).
    pub polyps_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_frames: 30,
            height: 64,
            width: 64,
            difficulty: Difficulty::Easy,
            max_speed: 1.5,
            distractors: 0,
            polyps_max: 2,
        }
    }
}

impl SynthConfig {
    /// Distractor count conventionally paired with a difficulty tier.
    pub fn default_distractors(d: Difficulty) -> usize {
        match d {
            Difficulty::Easy => 0,
            Difficulty::Medium => 1,
            Difficulty::Hard => 2,
        }
    }
}

/// Analytic per-frame state of one synthetic polyp.
#[derive(Debug, Clone)]
pub struct EllipseState {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

/// Full trajectory of one polyp across a clip, exposed so tests can replay
/// the motion analytically.
#[derive(Debug, Clone)]
pub struct PolypTrack {
    pub states: Vec<EllipseState>,
}

/// Smooth low-frequency value noise in [0, 1] from a bilinear lattice.
fn value_noise(rng: &mut impl Rng, h: usize, w: usize, cells: usize) -> Vec<f64> {
    let gh = cells + 1;
    let lattice: Vec<f64> = (0..gh * gh).map(|_| rng.gen::<f64>()).collect();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let fy = r as f64 / h as f64 * cells as f64;
            let fx = c as f64 / w as f64 * cells as f64;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let (y1, x1) = ((y0 + 1).min(cells), (x0 + 1).min(cells));
            let v = lattice[y0 * gh + x0] * (1.0 - ty) * (1.0 - tx)
                + lattice[y0 * gh + x1] * (1.0 - ty) * tx
                + lattice[y1 * gh + x0] * ty * (1.0 - tx)
                + lattice[y1 * gh + x1] * ty * tx;
            out[r * w + c] = v;
        }
    }
    out
}

fn ellipse_contains(s: &EllipseState, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - s.cx, y - s.cy);
    let (cos, sin) = (s.angle.cos(), s.angle.sin());
    let u = (dx * cos + dy * sin) / s.rx;
    let v = (-dx * sin + dy * cos) / s.ry;
    u * u + v * v <= 1.0
}

/// Normalized squared ellipse coordinate, used for interior shading.
fn ellipse_field(s: &EllipseState, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - s.cx, y - s.cy);
    let (cos, sin) = (s.angle.cos(), s.angle.sin());
    let u = (dx * cos + dy * sin) / s.rx;
    let v = (-dx * sin + dy * cos) / s.ry;
    u * u + v * v
}

/// Deterministic synthetic clip: textured mucosa-hued background with one
/// or two elliptical polyps on smooth random walks, per-frame deformation,
/// and exact analytic masks. Also returns the analytic trajectories.
pub fn generate_synthetic_clip_traced(
    seed: u64,
    clip_index: u64,
    cfg: &SynthConfig,
) -> (VideoClip, Vec<PolypTrack>) {
    let (h, w) = (cfg.height, cfg.width);
    assert!(h >= 16 && w >= 16, "degenerate extents");
    let mut rng = SeedTree::new(seed).stream_indexed("synth", clip_index);

    let coarse = value_noise(&mut rng, h, w, 4);
    let fine = value_noise(&mut rng, h, w, 8);
    let (blend_alpha, deform_amp, noise_gain) = match cfg.difficulty {
        Difficulty::Easy => (1.0, 0.06, 18.0),
        Difficulty::Medium => (0.7, 0.10, 26.0),
        Difficulty::Hard => (0.45, 0.16, 34.0),
    };

    // 1-2 polyps with radii bounded so the union stays under a quarter of
    // the frame.
    let count = if cfg.polyps_max > 1 {
        1 + (rng.gen::<f64>() < 0.5) as usize
    } else {
        1
    };
    let r_lo = (h.min(w) as f64 / 10.0).max(2.0);
    let r_hi = (h.min(w) as f64 / 6.0).max(r_lo * 1.3);
    struct Walker {
        cx: f64,
        cy: f64,
        vx: f64,
        vy: f64,
        rx0: f64,
        ry0: f64,
        angle: f64,
        spin: f64,
        phase: f64,
        period: f64,
    }
    let mut walkers: Vec<Walker> = (0..count)
        .map(|_| {
            let rx0 = rng.gen_range(r_lo..r_hi);
            let ry0 = rng.gen_range(r_lo..r_hi);
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed = rng.gen_range(0.3..cfg.max_speed.max(0.31));
            let margin = rx0.max(ry0) + 2.0;
            Walker {
                cx: rng.gen_range(margin..w as f64 - margin),
                cy: rng.gen_range(margin..h as f64 - margin),
                vx: speed * dir.cos(),
                vy: speed * dir.sin(),
                rx0,
                ry0,
                angle: rng.gen_range(0.0..std::f64::consts::TAU),
                spin: rng.gen_range(-0.05..0.05),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
                period: rng.gen_range(8.0..16.0),
            }
        })
        .collect();

    // Static lookalikes: same shape, shading, and placement law as the
    // polyps — no motion, no mask entry.
    let decoys: Vec<EllipseState> = (0..cfg.distractors)
        .map(|_| {
            let rx = rng.gen_range(r_lo..r_hi);
            let ry = rng.gen_range(r_lo..r_hi);
            let margin = rx.max(ry) + 2.0;
            EllipseState {
                cx: rng.gen_range(margin..w as f64 - margin),
                cy: rng.gen_range(margin..h as f64 - margin),
                rx,
                ry,
                angle: rng.gen_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();

    let mut tracks: Vec<PolypTrack> = (0..count).map(|_| PolypTrack { states: Vec::new() }).collect();
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut masks = Vec::with_capacity(cfg.n_frames);

    for t in 0..cfg.n_frames {
        // Advance walkers and record the analytic states first.
        let states: Vec<EllipseState> = walkers
            .iter_mut()
            .enumerate()
            .map(|(i, wk)| {
                if t > 0 {
                    wk.vx += rng.gen_range(-0.25..0.25);
                    wk.vy += rng.gen_range(-0.25..0.25);
                    let speed = (wk.vx * wk.vx + wk.vy * wk.vy).sqrt();
                    if speed > cfg.max_speed {
                        wk.vx *= cfg.max_speed / speed;
                        wk.vy *= cfg.max_speed / speed;
                    }
                    wk.cx += wk.vx;
                    wk.cy += wk.vy;
                    // Bounce off the margins so the polyp stays in frame.
                    let mx = wk.rx0.max(wk.ry0) + 2.0;
                    if wk.cx < mx || wk.cx > w as f64 - mx {
                        wk.vx = -wk.vx;
                        wk.cx = wk.cx.clamp(mx, w as f64 - mx);
                    }
                    if wk.cy < mx || wk.cy > h as f64 - mx {
                        wk.vy = -wk.vy;
                        wk.cy = wk.cy.clamp(mx, h as f64 - mx);
                    }
                    wk.angle += wk.spin;
                }
                let wobble = 1.0 + deform_amp * (wk.phase + t as f64 / wk.period * std::f64::consts::TAU).sin();
                let state = EllipseState {
                    cx: wk.cx,
                    cy: wk.cy,
                    rx: wk.rx0 * wobble,
                    ry: wk.ry0 / wobble,
                    angle: wk.angle,
                };
                tracks[i].states.push(state.clone());
                state
            })
            .collect();

        let mut rgb = vec![0u8; h * w * 3];
        let mut bits = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                let n1 = coarse[p];
                let n2 = fine[p];
                // Mucosa-like base hue modulated by the noise field.
                let mut red = 172.0 + 46.0 * n1 + noise_gain * (n2 - 0.5);
                let mut green = 96.0 + 34.0 * n1 + noise_gain * 0.8 * (n2 - 0.5);
                let mut blue = 92.0 + 26.0 * n1 + noise_gain * 0.6 * (n2 - 0.5);

                let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                let paint = |s: &EllipseState, red: &mut f64, green: &mut f64, blue: &mut f64| {
                    let q = ellipse_field(s, x, y); // 0 center .. 1 rim
                    let dome = 1.0 - 0.5 * q;
                    let pr = 214.0 * dome + 22.0 * n2;
                    let pg = 150.0 * dome + 16.0 * n2;
                    let pb = 132.0 * dome + 14.0 * n2;
                    *red = blend_alpha * pr + (1.0 - blend_alpha) * *red;
                    *green = blend_alpha * pg + (1.0 - blend_alpha) * *green;
                    *blue = blend_alpha * pb + (1.0 - blend_alpha) * *blue;
                };
                for s in &decoys {
                    if ellipse_contains(s, x, y) {
                        paint(s, &mut red, &mut green, &mut blue);
                    }
                }
                for s in &states {
                    if ellipse_contains(s, x, y) {
                        bits[p] = 1;
                        paint(s, &mut red, &mut green, &mut blue);
                    }
                }
                rgb[p * 3] = red.clamp(0.0, 255.0) as u8;
                rgb[p * 3 + 1] = green.clamp(0.0, 255.0) as u8;
                rgb[p * 3 + 2] = blue.clamp(0.0, 255.0) as u8;
            }
        }
        frames.push(Frame { height: h, width: w, rgb });
        masks.push(Mask { height: h, width: w, bits });
    }

    (
        VideoClip {
            clip_id: format!("synth_{clip_index:04}"),
            frames,
            masks,
            fps: 30.0,
        },
        tracks,
    )
}

pub fn generate_synthetic_clip(seed: u64, clip_index: u64, cfg: &SynthConfig) -> VideoClip {
    generate_synthetic_clip_traced(seed, clip_index, cfg).0
}

// ── directory layout ────────────────────────────────────────────────────

/// Natural (digit-aware) filename ordering: `frame2` < `frame10`.
fn natural_key(name: &str) -> Vec<(u64, String)> {
    let mut key = Vec::new();
    let mut chars = name.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_ascii_digit() {
            let mut num = 0u64;
            while let Some(&d) = chars.peek() {
                if let Some(v) = d.to_digit(10) {
                    num = num.saturating_mul(10) + v as u64;
                    chars.next();
                } else {
                    break;
                }
            }
            key.push((num, String::new()));
        } else {
            let mut text = String::new();
            while let Some(&d) = chars.peek() {
                if d.is_ascii_digit() {
                    break;
                }
                text.push(d);
                chars.next();
            }
            key.push((u64::MAX, text));
        }
    }
    key
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
            )
        })
        .collect();
    files.sort_by_key(|p| natural_key(&p.file_name().unwrap_or_default().to_string_lossy()));
    Ok(files)
}

fn read_rgb(path: &Path) -> Result<Frame, DataError> {
    let img = ImageReader::open(path)
        .map_err(|e| DataError::BadImage { path: path.into(), reason: e.to_string() })?
        .decode()
        .map_err(|e| DataError::BadImage { path: path.into(), reason: e.to_string() })?
        .to_rgb8();
    Ok(Frame {
        height: img.height() as usize,
        width: img.width() as usize,
        rgb: img.into_raw(),
    })
}

/// Masks binarize at 128/255.
fn read_mask(path: &Path) -> Result<Mask, DataError> {
    let img = ImageReader::open(path)
        .map_err(|e| DataError::BadImage { path: path.into(), reason: e.to_string() })?
        .decode()
        .map_err(|e| DataError::BadImage { path: path.into(), reason: e.to_string() })?
        .to_luma8();
    Ok(Mask {
        height: img.height() as usize,
        width: img.width() as usize,
        bits: img.into_raw().iter().map(|&v| (v >= 128) as u8).collect(),
    })
}

/// Loads every clip under `root` (`<root>/<clip>/Frame` + `GT`). Clips are
/// sorted naturally by id, frames by filename. Count mismatches and
/// missing masks are hard errors, never silent truncation.
pub fn load_dataset(root: &Path) -> Result<Vec<VideoClip>, DataError> {
    if !root.is_dir() {
        return Err(DataError::BadRoot(root.into()));
    }
    let mut clip_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    clip_dirs.sort_by_key(|p| natural_key(&p.file_name().unwrap_or_default().to_string_lossy()));

    let mut clips = Vec::new();
    for dir in clip_dirs {
        let clip_id = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let frame_dir = dir.join("Frame");
        let gt_dir = dir.join("GT");
        if !frame_dir.is_dir() || !gt_dir.is_dir() {
            continue; // not a clip directory
        }
        let frame_files = list_images(&frame_dir)?;
        let mask_files = list_images(&gt_dir)?;
        if frame_files.len() != mask_files.len() {
            return Err(DataError::CountMismatch {
                clip: clip_id,
                frames: frame_files.len(),
                masks: mask_files.len(),
            });
        }
        let mut frames = Vec::with_capacity(frame_files.len());
        let mut masks = Vec::with_capacity(frame_files.len());
        let mut extents: Option<(usize, usize)> = None;
        for ff in &frame_files {
            let stem = ff.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let mask_path = ["png", "jpg", "jpeg"]
                .iter()
                .map(|ext| gt_dir.join(format!("{stem}.{ext}")))
                .find(|p| p.exists())
                .ok_or_else(|| DataError::MissingMask {
                    clip: clip_id.clone(),
                    frame: ff.file_name().unwrap_or_default().to_string_lossy().to_string(),
                })?;
            let frame = read_rgb(ff)?;
            let mask = read_mask(&mask_path)?;
            let got = (frame.height, frame.width);
            if mask.height != frame.height || mask.width != frame.width {
                return Err(DataError::MixedExtents { clip: clip_id.clone(), first: got, got: (mask.height, mask.width) });
            }
            match extents {
                None => extents = Some(got),
                Some(first) if first != got => {
                    return Err(DataError::MixedExtents { clip: clip_id.clone(), first, got })
                }
                _ => {}
            }
            frames.push(frame);
            masks.push(mask);
        }
        clips.push(VideoClip { clip_id, frames, masks, fps: 30.0 });
    }
    Ok(clips)
}

/// Writes a clip in the loader's layout (`Frame/*.png`, `GT/*.png`), so a
/// generated dataset round-trips through `load_dataset`.
pub fn export_clip(clip: &VideoClip, root: &Path) -> Result<(), DataError> {
    let base = root.join(&clip.clip_id);
    let frame_dir = base.join("Frame");
    let gt_dir = base.join("GT");
    fs::create_dir_all(&frame_dir)?;
    fs::create_dir_all(&gt_dir)?;
    for (i, (frame, mask)) in clip.frames.iter().zip(&clip.masks).enumerate() {
        let img = RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.rgb.clone())
            .expect("frame buffer size");
        let path = frame_dir.join(format!("{i:04}.png"));
        img.save(&path)
            .map_err(|e| DataError::BadImage { path, reason: e.to_string() })?;
        let gm = GrayImage::from_raw(
            mask.width as u32,
            mask.height as u32,
            mask.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect(),
        )
        .expect("mask buffer size");
        let path = gt_dir.join(format!("{i:04}.png"));
        gm.save(&path)
            .map_err(|e| DataError::BadImage { path, reason: e.to_string() })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic_clip(9, 3, &cfg);
        let b = generate_synthetic_clip(9, 3, &cfg);
        assert_eq!(a, b);
        let c = generate_synthetic_clip(10, 3, &cfg);
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_masks_are_nonempty_and_bounded() {
        let cfg = SynthConfig::default();
        for seed in 0..5 {
            let clip = generate_synthetic_clip(seed, 0, &cfg);
            for m in &clip.masks {
                let fg = m.foreground_count();
                assert!(fg > 0, "empty mask at seed {seed}");
                assert!(
                    (fg as f64) < 0.25 * (m.height * m.width) as f64,
                    "mask covers {fg} of {}", m.height * m.width
                );
            }
        }
    }

    #[test]
    fn trajectory_replay_bounds_centroid_speed() {
        let cfg = SynthConfig::default();
        let (_, tracks) = generate_synthetic_clip_traced(17, 2, &cfg);
        for track in &tracks {
            for pair in track.states.windows(2) {
                let d = ((pair[1].cx - pair[0].cx).powi(2) + (pair[1].cy - pair[0].cy).powi(2)).sqrt();
                assert!(d <= cfg.max_speed + 1e-9, "step {d} exceeds {}", cfg.max_speed);
            }
        }
    }

    #[test]
    fn sampler_enumerates_t_minus_delta_pairs() {
        let clip = generate_synthetic_clip(1, 0, &SynthConfig { n_frames: 5, ..Default::default() });
        let cfg = SamplerConfig { delta: 2, shuffle_seed: None, batch_size: 1 };
        let pairs = sample_pairs(&clip, &cfg).unwrap();
        let idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.t_anchor, p.t_reference)).collect();
        assert_eq!(idx, vec![(2, 0), (3, 1), (4, 2)]);
        assert_eq!(pairs.len(), clip.len() - cfg.delta);
    }

    #[test]
    fn sampler_minimum_clip_and_contract() {
        let clip = generate_synthetic_clip(1, 0, &SynthConfig { n_frames: 2, ..Default::default() });
        let pairs = sample_pairs(&clip, &SamplerConfig { delta: 1, shuffle_seed: None, batch_size: 1 }).unwrap();
        assert_eq!(pairs.len(), 1);

        for delta in 1..4usize {
            let clip = generate_synthetic_clip(3, 1, &SynthConfig { n_frames: 8, ..Default::default() });
            let pairs =
                sample_pairs(&clip, &SamplerConfig { delta, shuffle_seed: Some(5), batch_size: 1 }).unwrap();
            assert_eq!(pairs.len(), 8 - delta);
            for p in &pairs {
                assert_eq!(p.t_anchor - p.t_reference, delta);
            }
        }
    }

    #[test]
    fn sampler_rejects_short_clips() {
        let clip = generate_synthetic_clip(1, 0, &SynthConfig { n_frames: 2, ..Default::default() });
        let err = sample_pairs(&clip, &SamplerConfig { delta: 2, shuffle_seed: None, batch_size: 1 });
        assert!(matches!(err, Err(DataError::TooShort { .. })));
    }

    #[test]
    fn pair_tensors_are_normalized_and_binary() {
        let clip = generate_synthetic_clip(2, 0, &SynthConfig { n_frames: 4, ..Default::default() });
        let pairs = sample_pairs(&clip, &SamplerConfig::default()).unwrap();
        let p = &pairs[0];
        assert!(p.anchor.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(p.anchor_mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(p.anchor.shape(), &[3, 64, 64]);
        assert_eq!(p.anchor_mask.shape(), &[1, 64, 64]);
    }

    #[test]
    fn export_import_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join(format!("vidseg_data_test_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        let cfg = SynthConfig { n_frames: 4, ..Default::default() };
        let clip = generate_synthetic_clip(21, 7, &cfg);
        export_clip(&clip, &dir).unwrap();
        let loaded = load_dataset(&dir).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].frames, clip.frames);
        assert_eq!(loaded[0].masks, clip.masks);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_root_loads_empty_list() {
        let dir = std::env::temp_dir().join(format!("vidseg_empty_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        assert!(load_dataset(&dir).unwrap().is_empty());
        assert!(load_dataset(&dir.join("nope")).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn mismatched_counts_are_an_error_not_truncation() {
        let dir = std::env::temp_dir().join(format!("vidseg_mismatch_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let cfg = SynthConfig { n_frames: 3, ..Default::default() };
        let clip = generate_synthetic_clip(5, 0, &cfg);
        export_clip(&clip, &dir).unwrap();
        // Remove one mask.
        fs::remove_file(dir.join(&clip.clip_id).join("GT").join("0002.png")).unwrap();
        let err = load_dataset(&dir);
        assert!(err.is_err(), "{err:?}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn natural_order_sorts_numerically() {
        let mut names = vec!["f10", "f2", "f1"];
        names.sort_by_key(|n| natural_key(n));
        assert_eq!(names, vec!["f1", "f2", "f10"]);
    }
}
