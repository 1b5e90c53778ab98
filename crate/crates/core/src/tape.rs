//! Reverse-mode automatic differentiation on a per-forward-pass tape.
//!
//! Operations append nodes in topological order (inputs always precede
//! outputs), so one backward sweep in reverse index order visits every
//! recorded operation exactly once. Gradients accumulate additively when a
//! value feeds several consumers. The tape is confined to one thread and
//! discarded after `backward`.

use std::collections::HashMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{axis_split, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Padding behaviour for convolution-like windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Out-of-range reads are zero.
    Zero,
    /// Out-of-range reads clamp to the nearest edge pixel.
    Replicate,
}

pub(crate) const LAYERNORM_EPS: f64 = 1e-5;

/// One recorded operation; fields are the input handles plus whatever the
/// backward rule needs.
#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    Matmul { a: Var, b: Var },
    Transpose { a: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddScalar { a: Var },
    Sum { a: Var },
    Sigmoid { a: Var },
    Relu { a: Var },
    Softplus { a: Var },
    Softmax { a: Var, axis: usize },
    Concat { a: Var, b: Var, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Reshape { a: Var },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        pad: usize,
        mode: PadMode,
    },
    AvgPool { x: Var, window: usize, mode: PadMode },
    Upsample { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, axis: usize },
    MulChan { x: Var, m: Var },
    AddColVec { x: Var, b: Var },
    Patchify { x: Var, patch: usize },
    Unpatchify { x: Var, patch: usize },
}

/// Per-forward-pass recording of values and operations.
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
    param_cache: HashMap<ParamId, Var>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            param_cache: HashMap::new(),
            check_finite: false,
        }
    }

    /// Enables the eager NaN/Inf scan after every operation.
    pub fn with_finite_checks() -> Self {
        let mut t = Self::new();
        t.check_finite = true;
        t
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let id = self.values.len();
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        Ok(Var(id))
    }

    /// Records a constant; no gradient is accumulated for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { requires_grad: false }, "constant")
            .expect("finite constant")
    }

    /// Records a differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { requires_grad: true }, "leaf")
            .expect("finite leaf")
    }

    /// Records a parameter leaf, memoized so repeated reads of the same
    /// parameter share one node (and therefore one gradient buffer).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.param_cache.insert(id, v);
        v
    }

    /// Gradients for every parameter touched on this tape, aligned with the
    /// store layout. Untouched parameters report `None`.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; store.len()];
        for (&id, &var) in &self.param_cache {
            out[id.index()] = self.grads[var.0].clone();
        }
        out
    }

    // ── binary elementwise ─────────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(data, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(data, Op::Sub { a, b }, "sub")
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(data, Op::Mul { a, b }, "hadamard")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x / y);
        self.push(data, Op::Div { a, b }, "div")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect())?;
        self.push(out, Op::Scale { a, c }, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + c).collect())?;
        self.push(out, Op::AddScalar { a }, "add_scalar")
    }

    // ── linear algebra ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.push(Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: s.to_vec(),
                reason: "rank-2 only".into(),
            });
        }
        let (m, n) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::Transpose { a }, "transpose")
    }

    // ── reductions & activations ───────────────────────────────────────

    /// Full reduction to a scalar of shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), sigmoid_scalar);
        self.push(out, Op::Sigmoid { a }, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu { a }, "relu")
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(out, Op::Softplus { a }, "softplus")
    }

    /// Exp-normalizes along `axis` with max subtraction; slices along the
    /// axis sum to 1.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(TensorError::AxisOutOfRange { axis, rank: t.rank() });
        }
        let out = softmax_forward(t, axis);
        self.push(out, Op::Softmax { a, axis }, "softmax")
    }

    // ── shape plumbing ─────────────────────────────────────────────────

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len()
            || axis >= sa.len()
            || sa.iter().zip(sb).enumerate().any(|(i, (x, y))| i != axis && x != y)
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut shape = sa.to_vec();
        shape[axis] += sb[axis];
        let (outer, ea, inner) = axis_split(sa, axis);
        let eb = sb[axis];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; outer * (ea + eb) * inner];
        for o in 0..outer {
            let dst = o * (ea + eb) * inner;
            out[dst..dst + ea * inner].copy_from_slice(&da[o * ea * inner..(o + 1) * ea * inner]);
            out[dst + ea * inner..dst + (ea + eb) * inner]
                .copy_from_slice(&db[o * eb * inner..(o + 1) * eb * inner]);
        }
        self.push(Tensor::new(shape, out)?, Op::Concat { a, b, axis }, "concat")
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape: s,
                reason: format!("axis {axis} range {start}..{} out of bounds", start + len),
            });
        }
        let (outer, e, inner) = axis_split(&s, axis);
        let d = self.value(a).data();
        let mut shape = s.clone();
        shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = (o * e + start) * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&d[src..src + len * inner]);
        }
        self.push(Tensor::new(shape, out)?, Op::Slice { a, axis, start }, "slice")
    }

    /// Inverse of `concat`: bit-exact split at `at` along `axis`.
    pub fn split(&mut self, a: Var, axis: usize, at: usize) -> Result<(Var, Var)> {
        let e = *self
            .shape(a)
            .get(axis)
            .ok_or(TensorError::AxisOutOfRange { axis, rank: self.shape(a).len() })?;
        if at == 0 || at >= e {
            return Err(TensorError::InvalidShape {
                op: "split",
                shape: self.shape(a).to_vec(),
                reason: format!("split point {at} outside 1..{e}"),
            });
        }
        let head = self.slice(a, axis, 0, at)?;
        let tail = self.slice(a, axis, at, e - at)?;
        Ok((head, tail))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("numel != {}", t.numel()),
            });
        }
        let out = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        self.push(out, Op::Reshape { a }, "reshape")
    }

    /// Stacks two same-shape tensors into a leading axis of extent 2.
    pub fn stack_pair(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("stack_pair", a, b)?;
        let mut s = vec![1];
        s.extend_from_slice(self.shape(a));
        let ar = self.reshape(a, &s)?;
        let br = self.reshape(b, &s)?;
        self.concat(ar, br, 0)
    }

    /// Inverse of `stack_pair`: splits a leading extent-2 axis.
    pub fn unstack_pair(&mut self, a: Var) -> Result<(Var, Var)> {
        let s = self.shape(a).to_vec();
        if s.first() != Some(&2) {
            return Err(TensorError::InvalidShape {
                op: "unstack_pair",
                shape: s,
                reason: "leading extent must be 2".into(),
            });
        }
        let (x, y) = self.split(a, 0, 1)?;
        let xr = self.reshape(x, &s[1..])?;
        let yr = self.reshape(y, &s[1..])?;
        Ok((xr, yr))
    }

    // ── spatial ops ────────────────────────────────────────────────────

    /// 2-D convolution over `[n, ci, h, w]` with kernel `[co, ci, kh, kw]`
    /// and optional per-channel bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: sx, rhs: sw });
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![sw[0]],
                });
            }
        }
        let geom = ConvGeom::new(&sx, &sw, stride, dilation, pad)?;
        let bias_data = bias.map(|b| self.value(b).data().to_vec());
        let out = conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias_data.as_deref(),
            &geom,
            mode,
        );
        self.push(
            Tensor::new(geom.out_shape(), out)?,
            Op::Conv2d { x, w, bias, stride, dilation, pad, mode },
            "conv2d",
        )
    }

    /// Windowed mean over the last two axes, stride 1, output extents equal
    /// input extents. `window` must be odd.
    pub fn avgpool(&mut self, x: Var, window: usize, mode: PadMode) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::InvalidShape {
                op: "avgpool",
                shape: s,
                reason: "needs at least 2 axes".into(),
            });
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if window % 2 == 0 || window == 0 {
            return Err(TensorError::InvalidShape {
                op: "avgpool",
                shape: s,
                reason: format!("window {window} must be odd"),
            });
        }
        let pad = window / 2;
        if window > h + 2 * pad || window > w + 2 * pad {
            return Err(TensorError::InvalidShape {
                op: "avgpool",
                shape: s,
                reason: format!("window {window} larger than padded input"),
            });
        }
        let out = avgpool_forward(self.value(x).data(), &s, window, mode);
        self.push(Tensor::new(s, out)?, Op::AvgPool { x, window, mode }, "avgpool")
    }

    /// Bilinear resize of the last two axes (half-pixel centers).
    pub fn upsample_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || oh == 0 || ow == 0 {
            return Err(TensorError::InvalidShape {
                op: "upsample_bilinear",
                shape: s,
                reason: format!("bad target {oh}x{ow}"),
            });
        }
        let mut shape = s.clone();
        let r = s.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let out = upsample_forward(self.value(x).data(), &s, oh, ow);
        self.push(Tensor::new(shape, out)?, Op::Upsample { x }, "upsample_bilinear")
    }

    /// Normalizes along `axis` to zero mean and unit variance, then applies
    /// the learned per-coordinate `gamma`/`beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::AxisOutOfRange { axis, rank: s.len() });
        }
        if self.shape(gamma) != [s[axis]] || self.shape(beta) != [s[axis]] {
            return Err(TensorError::ShapeMismatch {
                op: "layernorm",
                lhs: self.shape(gamma).to_vec(),
                rhs: vec![s[axis]],
            });
        }
        let out = layernorm_forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            axis,
        );
        self.push(out, Op::LayerNorm { x, gamma, beta, axis }, "layernorm")
    }

    /// Broadcast product of `x: [c, h, w]` with a single-channel map
    /// `m: [1, h, w]`.
    pub fn mul_chan(&mut self, x: Var, m: Var) -> Result<Var> {
        let (sx, sm) = (self.shape(x).to_vec(), self.shape(m).to_vec());
        if sx.len() != 3 || sm.len() != 3 || sm[0] != 1 || sm[1] != sx[1] || sm[2] != sx[2] {
            return Err(TensorError::ShapeMismatch { op: "mul_chan", lhs: sx, rhs: sm });
        }
        let plane = sx[1] * sx[2];
        let (dx, dm) = (self.value(x).data(), self.value(m).data());
        let mut out = vec![0.0; dx.len()];
        for c in 0..sx[0] {
            for p in 0..plane {
                out[c * plane + p] = dx[c * plane + p] * dm[p];
            }
        }
        self.push(Tensor::new(sx, out)?, Op::MulChan { x, m }, "mul_chan")
    }

    /// Adds `b[i]` to every element of row `i` of `x: [m, n]`.
    pub fn add_col_vec(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() != 2 || sb != [sx[0]] {
            return Err(TensorError::ShapeMismatch { op: "add_col_vec", lhs: sx, rhs: sb });
        }
        let (m, n) = (sx[0], sx[1]);
        let (dx, db) = (self.value(x).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dx[i * n + j] + db[i];
            }
        }
        self.push(Tensor::new(sx, out)?, Op::AddColVec { x, b }, "add_col_vec")
    }

    /// Rearranges `[c, h, w]` into patch-major form `[p², n·c]` where
    /// `n = (h/p)·(w/p)`: row = pixel position inside the patch, column =
    /// patch index × c + channel. Pure permutation.
    pub fn patchify(&mut self, x: Var, patch: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || patch == 0 || s[1] % patch != 0 || s[2] % patch != 0 {
            return Err(TensorError::InvalidShape {
                op: "patchify",
                shape: s,
                reason: format!("patch {patch} must divide spatial extents"),
            });
        }
        let out = patchify_raw(self.value(x).data(), s[0], s[1], s[2], patch, false);
        let n = (s[1] / patch) * (s[2] / patch);
        self.push(
            Tensor::new(vec![patch * patch, n * s[0]], out)?,
            Op::Patchify { x, patch },
            "patchify",
        )
    }

    /// Exact inverse of `patchify` for the stated channel/spatial extents.
    pub fn unpatchify(&mut self, x: Var, patch: usize, c: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let n = (h / patch) * (w / patch);
        if s != [patch * patch, n * c] || h % patch != 0 || w % patch != 0 {
            return Err(TensorError::InvalidShape {
                op: "unpatchify",
                shape: s,
                reason: format!("expected [{}, {}] for {c}x{h}x{w}/p{patch}", patch * patch, n * c),
            });
        }
        let out = unpatchify_raw(self.value(x).data(), c, h, w, patch);
        self.push(Tensor::new(vec![c, h, w], out)?, Op::Unpatchify { x, patch }, "unpatchify")
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Seeds `∂loss/∂loss = 1` and sweeps the tape in reverse. Every
    /// differentiable leaf reachable from `loss` ends up with its gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.values[loss.0].shape().to_vec(),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if self.grads[idx].is_none() {
                continue;
            }
            self.step_backward(idx);
        }
        Ok(())
    }

    fn step_backward(&mut self, idx: usize) {
        let (lo, hi) = self.grads.split_at_mut(idx);
        let g = hi[0].as_ref().expect("visited node has grad").clone();
        let values = &self.values;
        let ops = &self.ops;

        // Allocates (or fetches) the gradient buffer for an earlier node,
        // skipping constants.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                debug_assert!(v.0 < idx, "tape must be topologically ordered");
                if matches!(ops[v.0], Op::Leaf { requires_grad: false }) {
                    None
                } else {
                    Some(lo[v.0].get_or_insert_with(|| vec![0.0; values[v.0].numel()]))
                }
            }};
        }

        match ops[idx].clone() {
            Op::Leaf { .. } => {}
            Op::Matmul { a, b } => {
                let sa = values[a.0].shape();
                let (m, k) = (sa[0], sa[1]);
                let n = values[b.0].shape()[1];
                if let Some(da) = acc!(a) {
                    // da += g · bᵀ
                    let bd = values[b.0].data();
                    for i in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bd[l * n + j];
                            }
                            da[i * k + l] += s;
                        }
                    }
                }
                if let Some(db) = acc!(b) {
                    // db += aᵀ · g
                    let ad = values[a.0].data();
                    for i in 0..m {
                        for l in 0..k {
                            let c = ad[i * k + l];
                            if c != 0.0 {
                                for j in 0..n {
                                    db[l * n + j] += c * g[i * n + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Transpose { a } => {
                if let Some(da) = acc!(a) {
                    let s = values[a.0].shape();
                    let (m, n) = (s[0], s[1]);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(da) = acc!(a) {
                    axpy(1.0, &g, da);
                }
                if let Some(db) = acc!(b) {
                    axpy(1.0, &g, db);
                }
            }
            Op::Sub { a, b } => {
                if let Some(da) = acc!(a) {
                    axpy(1.0, &g, da);
                }
                if let Some(db) = acc!(b) {
                    axpy(-1.0, &g, db);
                }
            }
            Op::Mul { a, b } => {
                if let Some(da) = acc!(a) {
                    let bd = values[b.0].data();
                    for i in 0..g.len() {
                        da[i] += g[i] * bd[i];
                    }
                }
                if let Some(db) = acc!(b) {
                    let ad = values[a.0].data();
                    for i in 0..g.len() {
                        db[i] += g[i] * ad[i];
                    }
                }
            }
            Op::Div { a, b } => {
                let (ad, bd) = (values[a.0].data(), values[b.0].data());
                if let Some(da) = acc!(a) {
                    for i in 0..g.len() {
                        da[i] += g[i] / bd[i];
                    }
                }
                if let Some(db) = acc!(b) {
                    for i in 0..g.len() {
                        db[i] -= g[i] * ad[i] / (bd[i] * bd[i]);
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(da) = acc!(a) {
                    axpy(c, &g, da);
                }
            }
            Op::AddScalar { a } => {
                if let Some(da) = acc!(a) {
                    axpy(1.0, &g, da);
                }
            }
            Op::Sum { a } => {
                if let Some(da) = acc!(a) {
                    for v in da.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Sigmoid { a } => {
                if let Some(da) = acc!(a) {
                    let y = values[idx].data();
                    for i in 0..g.len() {
                        da[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Relu { a } => {
                if let Some(da) = acc!(a) {
                    let x = values[a.0].data();
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                }
            }
            Op::Softplus { a } => {
                if let Some(da) = acc!(a) {
                    let x = values[a.0].data();
                    for i in 0..g.len() {
                        da[i] += g[i] * sigmoid_scalar(x[i]);
                    }
                }
            }
            Op::Softmax { a, axis } => {
                if let Some(da) = acc!(a) {
                    let y = values[idx].data();
                    let (outer, e, inner) = axis_split(values[idx].shape(), axis);
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut dot = 0.0;
                            for j in 0..e {
                                let f = (o * e + j) * inner + i;
                                dot += g[f] * y[f];
                            }
                            for j in 0..e {
                                let f = (o * e + j) * inner + i;
                                da[f] += y[f] * (g[f] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat { a, b, axis } => {
                let (outer, ea, inner) = axis_split(values[a.0].shape(), axis);
                let eb = values[b.0].shape()[axis];
                if let Some(da) = acc!(a) {
                    for o in 0..outer {
                        for j in 0..ea * inner {
                            da[o * ea * inner + j] += g[o * (ea + eb) * inner + j];
                        }
                    }
                }
                if let Some(db) = acc!(b) {
                    for o in 0..outer {
                        for j in 0..eb * inner {
                            db[o * eb * inner + j] += g[(o * (ea + eb) + ea) * inner + j];
                        }
                    }
                }
            }
            Op::Slice { a, axis, start } => {
                if let Some(da) = acc!(a) {
                    let (outer, e, inner) = axis_split(values[a.0].shape(), axis);
                    let len = values[idx].shape()[axis];
                    for o in 0..outer {
                        for j in 0..len * inner {
                            da[(o * e + start) * inner + j] += g[o * len * inner + j];
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(da) = acc!(a) {
                    axpy(1.0, &g, da);
                }
            }
            Op::Conv2d { x, w, bias, stride, dilation, pad, mode } => {
                let geom = ConvGeom::new(
                    values[x.0].shape(),
                    values[w.0].shape(),
                    stride,
                    dilation,
                    pad,
                )
                .expect("geometry validated at forward");
                // Split borrows: x and w may both need accumulation.
                let xd = values[x.0].data();
                let wd = values[w.0].data();
                let mut dx_buf = vec![0.0; xd.len()];
                let mut dw_buf = vec![0.0; wd.len()];
                conv2d_backward(xd, wd, &g, &geom, mode, &mut dx_buf, &mut dw_buf);
                if let Some(dx) = acc!(x) {
                    axpy(1.0, &dx_buf, dx);
                }
                if let Some(dw) = acc!(w) {
                    axpy(1.0, &dw_buf, dw);
                }
                if let Some(bv) = bias {
                    if let Some(db) = acc!(bv) {
                        let (co, plane) = (geom.co, geom.ho * geom.wo);
                        for bn in 0..geom.n {
                            for oc in 0..co {
                                let base = (bn * co + oc) * plane;
                                let mut s = 0.0;
                                for p in 0..plane {
                                    s += g[base + p];
                                }
                                db[oc] += s;
                            }
                        }
                    }
                }
            }
            Op::AvgPool { x, window, mode } => {
                if let Some(dx) = acc!(x) {
                    avgpool_backward(&g, values[x.0].shape(), window, mode, dx);
                }
            }
            Op::Upsample { x } => {
                if let Some(dx) = acc!(x) {
                    let so = values[idx].shape();
                    let (oh, ow) = (so[so.len() - 2], so[so.len() - 1]);
                    upsample_backward(&g, values[x.0].shape(), oh, ow, dx);
                }
            }
            Op::LayerNorm { x, gamma, beta, axis } => {
                layernorm_backward(self, idx, x, gamma, beta, axis, &g);
            }
            Op::MulChan { x, m } => {
                let sx = values[x.0].shape();
                let (c, plane) = (sx[0], sx[1] * sx[2]);
                if let Some(dx) = acc!(x) {
                    let md = values[m.0].data();
                    for ch in 0..c {
                        for p in 0..plane {
                            dx[ch * plane + p] += g[ch * plane + p] * md[p];
                        }
                    }
                }
                if let Some(dm) = acc!(m) {
                    let xd = values[x.0].data();
                    for ch in 0..c {
                        for p in 0..plane {
                            dm[p] += g[ch * plane + p] * xd[ch * plane + p];
                        }
                    }
                }
            }
            Op::AddColVec { x, b } => {
                let (m, n) = {
                    let s = values[x.0].shape();
                    (s[0], s[1])
                };
                if let Some(dx) = acc!(x) {
                    axpy(1.0, &g, dx);
                }
                if let Some(db) = acc!(b) {
                    for i in 0..m {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j];
                        }
                        db[i] += s;
                    }
                }
            }
            Op::Patchify { x, patch } => {
                if let Some(dx) = acc!(x) {
                    let s = values[x.0].shape();
                    let back = unpatchify_raw(&g, s[0], s[1], s[2], patch);
                    axpy(1.0, &back, dx);
                }
            }
            Op::Unpatchify { x, patch } => {
                if let Some(dx) = acc!(x) {
                    let so = values[idx].shape();
                    let back = patchify_raw(&g, so[0], so[1], so[2], patch, false);
                    axpy(1.0, &back, dx);
                }
            }
        }
    }
}

// LayerNorm backward is long enough to live outside the match.
fn layernorm_backward(tape: &mut Tape, idx: usize, x: Var, gamma: Var, beta: Var, axis: usize, g: &[f64]) {
    let xs = tape.values[x.0].shape().to_vec();
    let (outer, e, inner) = axis_split(&xs, axis);
    let xd = tape.values[x.0].data().to_vec();
    let gd = tape.values[gamma.0].data().to_vec();
    let m = e as f64;

    let mut dx_buf = vec![0.0; xd.len()];
    let mut dgamma = vec![0.0; e];
    let mut dbeta = vec![0.0; e];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * e + j) * inner + i;
            let mut mean = 0.0;
            for j in 0..e {
                mean += xd[at(j)];
            }
            mean /= m;
            let mut var = 0.0;
            for j in 0..e {
                let d = xd[at(j)] - mean;
                var += d * d;
            }
            var /= m;
            let r = 1.0 / (var + LAYERNORM_EPS).sqrt();
            let mut sum_a = 0.0;
            let mut sum_ax = 0.0;
            for j in 0..e {
                let xh = (xd[at(j)] - mean) * r;
                let a = gd[j] * g[at(j)];
                sum_a += a;
                sum_ax += a * xh;
                dgamma[j] += g[at(j)] * xh;
                dbeta[j] += g[at(j)];
            }
            for j in 0..e {
                let xh = (xd[at(j)] - mean) * r;
                let a = gd[j] * g[at(j)];
                dx_buf[at(j)] += r * (a - sum_a / m - xh * sum_ax / m);
            }
        }
    }

    let (lo, _) = tape.grads.split_at_mut(idx);
    let values = &tape.values;
    let ops = &tape.ops;
    let mut put = |v: Var, buf: &[f64]| {
        if !matches!(ops[v.0], Op::Leaf { requires_grad: false }) {
            let slot = lo[v.0].get_or_insert_with(|| vec![0.0; values[v.0].numel()]);
            axpy(1.0, buf, slot);
        }
    };
    put(x, &dx_buf);
    put(gamma, &dgamma);
    put(beta, &dbeta);
}

// ── raw kernels ─────────────────────────────────────────────────────────

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn axpy(c: f64, src: &[f64], dst: &mut [f64]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// out[m,n] += a[m,k] · b[k,n]
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for l in 0..k {
            let c = a[i * k + l];
            if c != 0.0 {
                let brow = &b[l * n..(l + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += c * brow[j];
                }
            }
        }
    }
}

fn softmax_forward(t: &Tensor, axis: usize) -> Tensor {
    let (outer, e, inner) = axis_split(t.shape(), axis);
    let x = t.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * e + j) * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for j in 0..e {
                mx = mx.max(x[at(j)]);
            }
            let mut z = 0.0;
            for j in 0..e {
                let v = (x[at(j)] - mx).exp();
                out[at(j)] = v;
                z += v;
            }
            for j in 0..e {
                out[at(j)] /= z;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}

/// Precomputed conv2d geometry.
struct ConvGeom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(sx: &[usize], sw: &[usize], stride: usize, dilation: usize, pad: usize) -> Result<Self> {
        let span_h = dilation * (sw[2] - 1) + 1;
        let span_w = dilation * (sw[3] - 1) + 1;
        if stride == 0 || dilation == 0 || sx[2] + 2 * pad < span_h || sx[3] + 2 * pad < span_w {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                shape: sx.to_vec(),
                reason: format!(
                    "kernel span {span_h}x{span_w} larger than padded input (pad {pad})"
                ),
            });
        }
        Ok(ConvGeom {
            n: sx[0],
            ci: sx[1],
            h: sx[2],
            w: sx[3],
            co: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            dilation,
            pad,
            ho: (sx[2] + 2 * pad - span_h) / stride + 1,
            wo: (sx[3] + 2 * pad - span_w) / stride + 1,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.co, self.ho, self.wo]
    }

    /// Maps an output coordinate and kernel offset to an input coordinate.
    /// `None` means the read falls in zero padding.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize, mode: PadMode) -> Option<usize> {
        let i = (o * self.stride + k * self.dilation) as isize - self.pad as isize;
        if i < 0 || i >= extent as isize {
            match mode {
                PadMode::Zero => None,
                PadMode::Replicate => Some(i.clamp(0, extent as isize - 1) as usize),
            }
        } else {
            Some(i as usize)
        }
    }
}

fn conv2d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom, mode: PadMode) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.co * g.ho * g.wo];
    if let Some(b) = bias {
        for bn in 0..g.n {
            for oc in 0..g.co {
                let base = (bn * g.co + oc) * g.ho * g.wo;
                out[base..base + g.ho * g.wo].fill(b[oc]);
            }
        }
    }
    for bn in 0..g.n {
        for oc in 0..g.co {
            let obase = (bn * g.co + oc) * g.ho * g.wo;
            for ic in 0..g.ci {
                let xbase = (bn * g.ci + ic) * g.h * g.w;
                for kr in 0..g.kh {
                    for kc in 0..g.kw {
                        let wv = w[((oc * g.ci + ic) * g.kh + kr) * g.kw + kc];
                        if wv == 0.0 {
                            continue;
                        }
                        for or_ in 0..g.ho {
                            let Some(ir) = g.src(or_, kr, g.h, mode) else { continue };
                            let xrow = xbase + ir * g.w;
                            let orow = obase + or_ * g.wo;
                            for ocol in 0..g.wo {
                                if let Some(icol) = g.src(ocol, kc, g.w, mode) {
                                    out[orow + ocol] += wv * x[xrow + icol];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    geom: &ConvGeom,
    mode: PadMode,
    dx: &mut [f64],
    dw: &mut [f64],
) {
    for bn in 0..geom.n {
        for oc in 0..geom.co {
            let obase = (bn * geom.co + oc) * geom.ho * geom.wo;
            for ic in 0..geom.ci {
                let xbase = (bn * geom.ci + ic) * geom.h * geom.w;
                for kr in 0..geom.kh {
                    for kc in 0..geom.kw {
                        let widx = ((oc * geom.ci + ic) * geom.kh + kr) * geom.kw + kc;
                        let wv = w[widx];
                        let mut wacc = 0.0;
                        for or_ in 0..geom.ho {
                            let Some(ir) = geom.src(or_, kr, geom.h, mode) else { continue };
                            let xrow = xbase + ir * geom.w;
                            let orow = obase + or_ * geom.wo;
                            for ocol in 0..geom.wo {
                                if let Some(icol) = geom.src(ocol, kc, geom.w, mode) {
                                    let gv = g[orow + ocol];
                                    wacc += gv * x[xrow + icol];
                                    dx[xrow + icol] += gv * wv;
                                }
                            }
                        }
                        dw[widx] += wacc;
                    }
                }
            }
        }
    }
}

fn avgpool_forward(x: &[f64], shape: &[usize], window: usize, mode: PadMode) -> Vec<f64> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = x.len() / (h * w);
    let pad = window as isize / 2;
    let norm = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; x.len()];
    for p in 0..planes {
        let base = p * h * w;
        for row in 0..h as isize {
            for col in 0..w as isize {
                let mut s = 0.0;
                for dr in -pad..=pad {
                    for dc in -pad..=pad {
                        let (ir, ic) = (row + dr, col + dc);
                        let inside = ir >= 0 && ir < h as isize && ic >= 0 && ic < w as isize;
                        match (inside, mode) {
                            (true, _) => s += x[base + ir as usize * w + ic as usize],
                            (false, PadMode::Zero) => {}
                            (false, PadMode::Replicate) => {
                                let cr = ir.clamp(0, h as isize - 1) as usize;
                                let cc = ic.clamp(0, w as isize - 1) as usize;
                                s += x[base + cr * w + cc];
                            }
                        }
                    }
                }
                out[base + row as usize * w + col as usize] = s * norm;
            }
        }
    }
    out
}

fn avgpool_backward(g: &[f64], shape: &[usize], window: usize, mode: PadMode, dx: &mut [f64]) {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = g.len() / (h * w);
    let pad = window as isize / 2;
    let norm = 1.0 / (window * window) as f64;
    for p in 0..planes {
        let base = p * h * w;
        for row in 0..h as isize {
            for col in 0..w as isize {
                let gv = g[base + row as usize * w + col as usize] * norm;
                for dr in -pad..=pad {
                    for dc in -pad..=pad {
                        let (ir, ic) = (row + dr, col + dc);
                        let inside = ir >= 0 && ir < h as isize && ic >= 0 && ic < w as isize;
                        match (inside, mode) {
                            (true, _) => dx[base + ir as usize * w + ic as usize] += gv,
                            (false, PadMode::Zero) => {}
                            (false, PadMode::Replicate) => {
                                let cr = ir.clamp(0, h as isize - 1) as usize;
                                let cc = ic.clamp(0, w as isize - 1) as usize;
                                dx[base + cr * w + cc] += gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// (source low index, source high index, high weight) for one output index.
#[inline]
fn bilinear_axis(o: usize, scale: f64, extent: usize) -> (usize, usize, f64) {
    let src = (o as f64 + 0.5) * scale - 0.5;
    let floor = src.floor();
    let t = src - floor;
    let i0 = (floor as isize).clamp(0, extent as isize - 1) as usize;
    let i1 = (floor as isize + 1).clamp(0, extent as isize - 1) as usize;
    (i0, i1, t)
}

fn upsample_forward(x: &[f64], shape: &[usize], oh: usize, ow: usize) -> Vec<f64> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = x.len() / (h * w);
    let (sh, sw) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let ib = p * h * w;
        let ob = p * oh * ow;
        for oy in 0..oh {
            let (y0, y1, ty) = bilinear_axis(oy, sh, h);
            for ox in 0..ow {
                let (x0, x1, tx) = bilinear_axis(ox, sw, w);
                out[ob + oy * ow + ox] = (1.0 - ty) * (1.0 - tx) * x[ib + y0 * w + x0]
                    + (1.0 - ty) * tx * x[ib + y0 * w + x1]
                    + ty * (1.0 - tx) * x[ib + y1 * w + x0]
                    + ty * tx * x[ib + y1 * w + x1];
            }
        }
    }
    out
}

fn upsample_backward(g: &[f64], shape: &[usize], oh: usize, ow: usize, dx: &mut [f64]) {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = dx.len() / (h * w);
    let (sh, sw) = (h as f64 / oh as f64, w as f64 / ow as f64);
    for p in 0..planes {
        let ib = p * h * w;
        let ob = p * oh * ow;
        for oy in 0..oh {
            let (y0, y1, ty) = bilinear_axis(oy, sh, h);
            for ox in 0..ow {
                let (x0, x1, tx) = bilinear_axis(ox, sw, w);
                let gv = g[ob + oy * ow + ox];
                dx[ib + y0 * w + x0] += (1.0 - ty) * (1.0 - tx) * gv;
                dx[ib + y0 * w + x1] += (1.0 - ty) * tx * gv;
                dx[ib + y1 * w + x0] += ty * (1.0 - tx) * gv;
                dx[ib + y1 * w + x1] += ty * tx * gv;
            }
        }
    }
}

fn layernorm_forward(x: &Tensor, gamma: &[f64], beta: &[f64], axis: usize) -> Tensor {
    let (outer, e, inner) = axis_split(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    let m = e as f64;
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * e + j) * inner + i;
            let mut mean = 0.0;
            for j in 0..e {
                mean += xd[at(j)];
            }
            mean /= m;
            let mut var = 0.0;
            for j in 0..e {
                let d = xd[at(j)] - mean;
                var += d * d;
            }
            var /= m;
            let r = 1.0 / (var + LAYERNORM_EPS).sqrt();
            for j in 0..e {
                out[at(j)] = (xd[at(j)] - mean) * r * gamma[j] + beta[j];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Permutes `[c, h, w]` into `[p², n·c]` (forward) — the `rev` flag is unused
/// today but keeps the pair of layouts in one place.
fn patchify_raw(x: &[f64], c: usize, h: usize, w: usize, p: usize, _rev: bool) -> Vec<f64> {
    let (ph, pw) = (h / p, w / p);
    let n = ph * pw;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let patch = py * pw + px;
                for r in 0..p {
                    for cl in 0..p {
                        let row = r * p + cl;
                        let col = patch * c + ch;
                        out[row * n * c + col] = x[ch * h * w + (py * p + r) * w + (px * p + cl)];
                    }
                }
            }
        }
    }
    out
}

fn unpatchify_raw(e: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ph, pw) = (h / p, w / p);
    let n = ph * pw;
    let mut out = vec![0.0; e.len()];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let patch = py * pw + px;
                for r in 0..p {
                    for cl in 0..p {
                        let row = r * p + cl;
                        let col = patch * c + ch;
                        out[ch * h * w + (py * p + r) * w + (px * p + cl)] = e[row * n * c + col];
                    }
                }
            }
        }
    }
    out
}
