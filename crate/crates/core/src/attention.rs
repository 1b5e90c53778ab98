//! Mixture attention over a pair of encoded frames.
//!
//! Both frames' top-level features are patch-embedded, a joint attention
//! matrix is computed from the column-concatenated embeddings, its four
//! sub-blocks are split out (mutual and self attention), each embedding is
//! enhanced by a softmax-normalized block, and the mutual/self parts are
//! fused with a weighting factor λ. The enhanced embeddings are rearranged
//! back into feature maps by inverting the patch layout, followed by a 1×1
//! reconciliation convolution.
//!
//! Two published ambiguities are resolved here exactly as the module docs
//! of each function state: the enhancement product is a matrix product (the
//! printed elementwise form does not type-check), and the mutual block
//! feeds *both* mutual enhancements, as printed. The latter makes the
//! module asymmetric under an anchor/reference swap whenever the mutual
//! block itself is asymmetric; the self components always swap cleanly.

use rand_chacha::ChaCha12Rng;

use crate::params::{ParamId, ParamStore};
use crate::rng::trunc_normal;
use crate::tape::{PadMode, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Joint attention matrix and its four sub-blocks. `ra`/`ar` carry the
/// inter-frame (mutual) relationships, `rr`/`aa` the intra-frame (self)
/// ones. All blocks are slices of `full`, never recomputed, so
/// `ra == arᵀ` holds bitwise and `rr`/`aa` are exactly symmetric.
pub struct AttentionBundle {
    pub full: Var,
    pub ra: Var,
    pub rr: Var,
    pub aa: Var,
    pub ar: Var,
}

/// The four enhanced embeddings of the enhancement step.
pub struct EnhancedEmbeddings {
    pub r_mutual: Var,
    pub a_mutual: Var,
    pub r_self: Var,
    pub a_self: Var,
}

/// Default patch size: half the top-level extent, so there are always at
/// least four patches.
pub fn default_patch(top_extent: usize) -> usize {
    (top_extent / 2).max(1)
}

pub struct MixtureAttention {
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
    proj_w: ParamId,
    proj_b: ParamId,
    position: ParamId,
    reconcile_w: ParamId,
    reconcile_b: ParamId,
}

impl MixtureAttention {
    /// `c/h/w` describe the top-level feature maps this module will see.
    pub fn init(
        store: &mut ParamStore,
        rng: &mut ChaCha12Rng,
        prefix: &str,
        c: usize,
        h: usize,
        w: usize,
        patch: usize,
    ) -> Result<Self> {
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return Err(TensorError::InvalidShape {
                op: "mixture_attention",
                shape: vec![c, h, w],
                reason: format!("patch {patch} must divide the spatial extents"),
            });
        }
        let p2 = patch * patch;
        let n = (h / patch) * (w / patch);
        // Identity plus noise: the projection and the channel reconciliation
        // start as refinements of the raw patch layout, which keeps the
        // attention branch at feature scale from the first step (a
        // near-zero start would starve the decoder's multiplicative
        // fusion of this branch).
        let mut proj: Vec<f64> = (0..p2 * p2).map(|_| trunc_normal(rng, 0.02)).collect();
        for i in 0..p2 {
            proj[i * p2 + i] += 1.0;
        }
        let mut rec: Vec<f64> = (0..c * c).map(|_| trunc_normal(rng, 0.02)).collect();
        for i in 0..c {
            rec[i * c + i] += 1.0;
        }
        // Position embeddings start small-random rather than zero: both
        // frames share them, so the joint attention matrix carries a
        // positional alignment prior from the first step instead of a
        // near-uniform softmax over look-alike texture columns.
        let pos: Vec<f64> = (0..p2 * n * c).map(|_| trunc_normal(rng, 0.25)).collect();
        Ok(MixtureAttention {
            channels: c,
            height: h,
            width: w,
            patch,
            proj_w: store.add(format!("{prefix}.proj.w"), Tensor::new(vec![p2, p2], proj)?),
            proj_b: store.add(format!("{prefix}.proj.b"), Tensor::zeros(&[p2])),
            position: store.add(format!("{prefix}.position"), Tensor::new(vec![p2, n * c], pos)?),
            reconcile_w: store.add(
                format!("{prefix}.reconcile.w"),
                Tensor::new(vec![c, c, 1, 1], rec)?,
            ),
            reconcile_b: store.add(format!("{prefix}.reconcile.b"), Tensor::zeros(&[c])),
        })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Rows of the embedding matrix: pixel positions within a patch.
    pub fn embed_rows(&self) -> usize {
        self.patch * self.patch
    }

    /// Columns: patch count × channels.
    pub fn embed_cols(&self) -> usize {
        let n = (self.height / self.patch) * (self.width / self.patch);
        n * self.channels
    }

    /// Patch-embeds one frame's features: rearrange `[c, h, w]` into
    /// `[p², n·c]`, apply the learned square projection per flattened patch
    /// (one left-multiplication), add the bias and position embedding.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, f: Var) -> Result<Var> {
        let expect = [self.channels, self.height, self.width];
        if tape.shape(f) != expect {
            return Err(TensorError::ShapeMismatch {
                op: "embed",
                lhs: tape.shape(f).to_vec(),
                rhs: expect.to_vec(),
            });
        }
        let raw = tape.patchify(f, self.patch)?;
        let w = tape.param(store, self.proj_w);
        let b = tape.param(store, self.proj_b);
        let pos = tape.param(store, self.position);
        let projected = tape.matmul(w, raw)?;
        let biased = tape.add_col_vec(projected, b)?;
        tape.add(biased, pos)
    }

    /// Rearranges an enhanced embedding back into a `[c, h, w]` map (pure
    /// layout inversion, no learned un-projection) and reconciles channels
    /// with a 1×1 convolution.
    pub fn restore(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        let map = tape.unpatchify(z, self.patch, self.channels, self.height, self.width)?;
        let (c, h, w) = (self.channels, self.height, self.width);
        let batched = tape.reshape(map, &[1, c, h, w])?;
        let rw = tape.param(store, self.reconcile_w);
        let rb = tape.param(store, self.reconcile_b);
        let out = tape.conv2d(batched, rw, Some(rb), 1, 1, 0, PadMode::Zero)?;
        tape.reshape(out, &[c, h, w])
    }

    /// Full pipeline: embed both frames, build the joint attention matrix,
    /// enhance, fuse with λ, and rearrange back into feature maps.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        f_anchor: Var,
        f_reference: Var,
        lambda: f64,
    ) -> Result<(Var, Var)> {
        let e_a = self.embed(tape, store, f_anchor)?;
        let e_r = self.embed(tape, store, f_reference)?;
        let bundle = attention_matrix(tape, e_a, e_r)?;
        let enhanced = enhance(tape, e_a, e_r, &bundle)?;
        let (z_a, z_r) = fuse(tape, &enhanced, lambda)?;
        Ok((
            self.restore(tape, store, z_a)?,
            self.restore(tape, store, z_r)?,
        ))
    }
}

/// Joint attention matrix of the two embeddings:
/// `full = [e_r, e_a]ᵀ · [e_a, e_r]` with `[·,·]` column concatenation.
/// Block layout: `[[ra, rr], [aa, ar]]`.
pub fn attention_matrix(tape: &mut Tape, e_a: Var, e_r: Var) -> Result<AttentionBundle> {
    if tape.shape(e_a) != tape.shape(e_r) {
        return Err(TensorError::ShapeMismatch {
            op: "attention_matrix",
            lhs: tape.shape(e_a).to_vec(),
            rhs: tape.shape(e_r).to_vec(),
        });
    }
    let nc = tape.shape(e_a)[1];
    let left = tape.concat(e_r, e_a, 1)?;
    let right = tape.concat(e_a, e_r, 1)?;
    let left_t = tape.transpose(left)?;
    let full = tape.matmul(left_t, right)?;
    let (top, bottom) = tape.split(full, 0, nc)?;
    let (ra, rr) = tape.split(top, 1, nc)?;
    let (aa, ar) = tape.split(bottom, 1, nc)?;
    Ok(AttentionBundle { full, ra, rr, aa, ar })
}

/// Enhances the embeddings with column-softmaxed attention blocks (each
/// output column is a convex combination of source columns). The mutual
/// block `ra` feeds both mutual enhancements, matching the published form.
pub fn enhance(tape: &mut Tape, e_a: Var, e_r: Var, bundle: &AttentionBundle) -> Result<EnhancedEmbeddings> {
    let s_ra = tape.softmax(bundle.ra, 0)?;
    let s_aa = tape.softmax(bundle.aa, 0)?;
    let s_rr = tape.softmax(bundle.rr, 0)?;
    Ok(EnhancedEmbeddings {
        r_mutual: tape.matmul(e_r, s_ra)?,
        a_mutual: tape.matmul(e_a, s_ra)?,
        a_self: tape.matmul(e_a, s_aa)?,
        r_self: tape.matmul(e_r, s_rr)?,
    })
}

/// λ-weighted fusion. Note the cross assignment: the anchor output takes
/// the *reference* mutual embedding and vice versa.
pub fn fuse(tape: &mut Tape, enh: &EnhancedEmbeddings, lambda: f64) -> Result<(Var, Var)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(TensorError::Invalid(format!(
            "fuse: lambda {lambda} outside [0, 1]"
        )));
    }
    let mix = |tape: &mut Tape, mutual: Var, own: Var| -> Result<Var> {
        let m = tape.scale(mutual, lambda)?;
        let s = tape.scale(own, 1.0 - lambda)?;
        tape.add(m, s)
    };
    let z_a = mix(tape, enh.r_mutual, enh.a_self)?;
    let z_r = mix(tape, enh.a_mutual, enh.r_self)?;
    Ok((z_a, z_r))
}
