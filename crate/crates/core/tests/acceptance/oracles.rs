//! Independent oracles for the acceptance suite: plain-loop linear algebra
//! and literal transcriptions of the published metric constructions. None
//! of this code calls into the library's implementation paths it checks.

/// Minimum eigenvalue of a symmetric matrix via cyclic Jacobi rotations.
pub fn symmetric_min_eigenvalue(matrix: &[f64], n: usize) -> f64 {
    let mut a = matrix.to_vec();
    for _sweep in 0..60 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).fold(f64::INFINITY, f64::min)
}

// ── plain-loop linear algebra for the step-literal pipeline ─────────────

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// Column softmax (normalizes each column over its rows) with max
/// subtraction.
pub fn column_softmax(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for j in 0..cols {
        let mut mx = f64::NEG_INFINITY;
        for i in 0..rows {
            mx = mx.max(a[i * cols + j]);
        }
        let mut z = 0.0;
        for i in 0..rows {
            let v = (a[i * cols + j] - mx).exp();
            out[i * cols + j] = v;
            z += v;
        }
        for i in 0..rows {
            out[i * cols + j] /= z;
        }
    }
    out
}

/// Patch rearrangement `[c, h, w] -> [p², n·c]`: row = pixel position
/// inside the patch, column = patch index × c + channel.
pub fn patch_rearrange(x: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ph, pw) = (h / p, w / p);
    let n = ph * pw;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                for r in 0..p {
                    for cl in 0..p {
                        out[(r * p + cl) * n * c + (py * pw + px) * c + ch] =
                            x[ch * h * w + (py * p + r) * w + (px * p + cl)];
                    }
                }
            }
        }
    }
    out
}

pub fn patch_restore(e: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ph, pw) = (h / p, w / p);
    let n = ph * pw;
    let mut out = vec![0.0; e.len()];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                for r in 0..p {
                    for cl in 0..p {
                        out[ch * h * w + (py * p + r) * w + (px * p + cl)] =
                            e[(r * p + cl) * n * c + (py * pw + px) * c + ch];
                    }
                }
            }
        }
    }
    out
}

// ── structure measure, transcribed ──────────────────────────────────────

const EPS: f64 = f64::EPSILON;

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_n1(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object_term(values: &[f64]) -> f64 {
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_n1(values) + EPS)
}

fn ssim_term(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.is_empty() {
        return 1.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let d = (n - 1.0).max(1.0);
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sx += (x[i] - mx) * (x[i] - mx);
        sy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    sx /= d;
    sy /= d;
    sxy /= d;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Structure measure: object term on foreground/background means and
/// dispersions plus a 4-block SSIM split at the ground-truth centroid,
/// with mean-comparison fallbacks for degenerate ground truths.
pub fn s_measure_oracle(pred: &[f64], gt: &[f64], h: usize, w: usize, alpha: f64) -> f64 {
    let mu = mean(gt);
    if mu == 0.0 {
        return 1.0 - mean(pred);
    }
    if mu == 1.0 {
        return mean(pred);
    }

    // Object part.
    let fg: Vec<f64> = (0..h * w).filter(|&i| gt[i] > 0.5).map(|i| pred[i]).collect();
    let bg: Vec<f64> = (0..h * w).filter(|&i| gt[i] < 0.5).map(|i| 1.0 - pred[i]).collect();
    let s_o = mu * object_term(&fg) + (1.0 - mu) * object_term(&bg);

    // Region part: split at the rounded 1-based centroid.
    let mut sr = 0.0;
    let mut sc = 0.0;
    let mut cnt = 0.0;
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
    let take = |src: &[f64], r0: usize, r1: usize, c0: usize, c1: usize| -> Vec<f64> {
        let mut out = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                out.push(src[r * w + c]);
            }
        }
        out
    };
    let mut s_r = 0.0;
    for (r0, r1, c0, c1) in [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)] {
        let weight = ((r1 - r0) * (c1 - c0)) as f64 / (h * w) as f64;
        if weight > 0.0 {
            s_r += weight * ssim_term(&take(pred, r0, r1, c0, c1), &take(gt, r0, r1, c0, c1));
        }
    }

    (alpha * s_o + (1.0 - alpha) * s_r).clamp(0.0, 1.0)
}

// ── enhanced-alignment measure, transcribed ─────────────────────────────

/// Mean E-measure over the 256-threshold sweep (strict `>` binarization,
/// per-pixel mean of the enhanced alignment, degenerate conventions).
pub fn e_measure_oracle(pred: &[f64], gt: &[f64], n_pixels: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..256 {
        let thr = k as f64 / 255.0;
        let bin: Vec<f64> = pred.iter().map(|&v| if v > thr { 1.0 } else { 0.0 }).collect();
        let gsum: f64 = gt.iter().sum();
        let phi = if gsum == 0.0 {
            bin.iter().map(|&b| 1.0 - b).sum::<f64>() / n_pixels as f64
        } else if gsum == n_pixels as f64 {
            bin.iter().sum::<f64>() / n_pixels as f64
        } else {
            let mg = gsum / n_pixels as f64;
            let mp = bin.iter().sum::<f64>() / n_pixels as f64;
            let mut acc = 0.0;
            for i in 0..n_pixels {
                let fp = bin[i] - mp;
                let fg = gt[i] - mg;
                let xi = 2.0 * fp * fg / (fp * fp + fg * fg + EPS);
                acc += (1.0 + xi) * (1.0 + xi) / 4.0;
            }
            acc / n_pixels as f64
        };
        total += phi;
    }
    total / 256.0
}

// ── weighted F-measure, transcribed ─────────────────────────────────────

/// Weighted F-measure: dependency-propagated error map, Gaussian
/// neighborhood discount (7×7, σ=5, zero padding), distance-decayed
/// background weighting, combined with β²-weighted precision/recall.
pub fn weighted_f_oracle(pred: &[f64], gt: &[f64], h: usize, w: usize, beta_sq: f64) -> Option<f64> {
    let pos: f64 = gt.iter().sum();
    if pos == 0.0 {
        return None;
    }
    let n = h * w;
    let err: Vec<f64> = (0..n).map(|i| (pred[i] - gt[i]).abs()).collect();

    // Exact nearest-foreground distance and index, brute force.
    let fg_idx: Vec<usize> = (0..n).filter(|&i| gt[i] > 0.5).collect();
    let mut dist = vec![0.0; n];
    let mut near = vec![0usize; n];
    for i in 0..n {
        if gt[i] > 0.5 {
            near[i] = i;
            continue;
        }
        let (r, c) = (i / w, i % w);
        let mut best = f64::INFINITY;
        for &j in &fg_idx {
            let (fr, fc) = (j / w, j % w);
            let d = (((r as f64 - fr as f64).powi(2)) + ((c as f64 - fc as f64).powi(2))).sqrt();
            if d < best {
                best = d;
                near[i] = j;
            }
        }
        dist[i] = best;
    }

    let mut err_prop = err.clone();
    for i in 0..n {
        if gt[i] < 0.5 {
            err_prop[i] = err[near[i]];
        }
    }

    // 7x7 Gaussian, sigma 5, normalized; zero padding.
    let mut kernel = [0.0f64; 49];
    let mut ks = 0.0;
    for r in 0..7 {
        for c in 0..7 {
            let v = (-(((r as f64 - 3.0).powi(2) + (c as f64 - 3.0).powi(2)) / 50.0)).exp();
            kernel[r * 7 + c] = v;
            ks += v;
        }
    }
    for v in kernel.iter_mut() {
        *v /= ks;
    }
    let mut blurred = vec![0.0; n];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut s = 0.0;
            for kr in -3..=3isize {
                for kc in -3..=3isize {
                    let (ir, ic) = (r + kr, c + kc);
                    if ir >= 0 && ir < h as isize && ic >= 0 && ic < w as isize {
                        s += kernel[((kr + 3) * 7 + kc + 3) as usize]
                            * err_prop[ir as usize * w + ic as usize];
                    }
                }
            }
            blurred[r as usize * w + c as usize] = s;
        }
    }

    let mut adjusted = err.clone();
    for i in 0..n {
        if gt[i] > 0.5 && blurred[i] < err[i] {
            adjusted[i] = blurred[i];
        }
    }
    let ln_half = 0.5f64.ln();
    let mut fg_err = 0.0;
    let mut bg_err = 0.0;
    for i in 0..n {
        if gt[i] > 0.5 {
            fg_err += adjusted[i];
        } else {
            bg_err += adjusted[i] * (2.0 - (ln_half / 5.0 * dist[i]).exp());
        }
    }
    let tp_w = (pos - fg_err).max(0.0);
    let recall_w = 1.0 - fg_err / pos;
    let precision_w = tp_w / (EPS + tp_w + bg_err);
    let den = EPS + beta_sq * precision_w + recall_w;
    Some(((1.0 + beta_sq) * precision_w * recall_w / den).clamp(0.0, 1.0))
}
