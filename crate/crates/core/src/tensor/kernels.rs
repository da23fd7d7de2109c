//! Forward and backward numeric kernels over `(batch, h, w, c)` buffers.
//!
//! These are graph-agnostic; [`super::graph`] wires them into the tape.

use rustfft::num_complex::Complex;

use super::scalar::{gemm, Trans};
use super::Scalar;

/// Spatial padding mode of a stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k/2` on each side; output keeps the input size.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub k: usize,
    pub co: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(n: usize, h: usize, w: usize, ci: usize, k: usize, co: usize, padding: Padding) -> Self {
        let (pad, ho, wo) = match padding {
            Padding::Same => (k / 2, h, w),
            Padding::Valid => (0, h + 1 - k, w + 1 - k),
        };
        Self {
            n,
            h,
            w,
            ci,
            k,
            co,
            pad,
            ho,
            wo,
        }
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn patch(&self) -> usize {
        self.k * self.k * self.ci
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    for b in 0..g.n {
        for i in 0..g.ho {
            for j in 0..g.wo {
                let row = ((b * g.ho + i) * g.wo + j) * patch;
                for ki in 0..g.k {
                    let si = (i + ki) as isize - g.pad as isize;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    for kj in 0..g.k {
                        let sj = (j + kj) as isize - g.pad as isize;
                        if sj < 0 || sj >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + si as usize) * g.w + sj as usize) * g.ci;
                        let dst = row + (ki * g.k + kj) * g.ci;
                        cols[dst..dst + g.ci].copy_from_slice(&x[src..src + g.ci]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let patch = g.patch();
    for b in 0..g.n {
        for i in 0..g.ho {
            for j in 0..g.wo {
                let row = ((b * g.ho + i) * g.wo + j) * patch;
                for ki in 0..g.k {
                    let si = (i + ki) as isize - g.pad as isize;
                    if si < 0 || si >= g.h as isize {
                        continue;
                    }
                    for kj in 0..g.k {
                        let sj = (j + kj) as isize - g.pad as isize;
                        if sj < 0 || sj >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + si as usize) * g.w + sj as usize) * g.ci;
                        let src = row + (ki * g.k + kj) * g.ci;
                        for c in 0..g.ci {
                            dx[dst + c] = dx[dst + c] + cols[src + c];
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 cross-correlation `y = x ⋆ K + b`.
pub fn conv2d_forward<T: Scalar>(x: &[T], kernel: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let m = g.rows();
    let mut y = Vec::with_capacity(m * g.co);
    for _ in 0..m {
        y.extend_from_slice(bias);
    }
    if g.is_pointwise() {
        gemm(m, g.patch(), g.co, x, Trans::No, kernel, Trans::No, &mut y, true);
    } else {
        let cols = im2col(x, g);
        gemm(m, g.patch(), g.co, &cols, Trans::No, kernel, Trans::No, &mut y, true);
    }
    y
}

/// Returns `(dx, dkernel, dbias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = g.rows();
    let patch = g.patch();
    let mut db = vec![T::zero(); g.co];
    for row in dy.chunks_exact(g.co) {
        for (d, v) in db.iter_mut().zip(row) {
            *d = *d + *v;
        }
    }
    let mut dk = vec![T::zero(); patch * g.co];
    if g.is_pointwise() {
        gemm(patch, m, g.co, x, Trans::Yes, dy, Trans::No, &mut dk, false);
        let mut dx = vec![T::zero(); m * patch];
        gemm(m, g.co, patch, dy, Trans::No, kernel, Trans::Yes, &mut dx, false);
        return (dx, dk, db);
    }
    let cols = im2col(x, g);
    gemm(patch, m, g.co, &cols, Trans::Yes, dy, Trans::No, &mut dk, false);
    let mut dcols = cols;
    gemm(m, g.co, patch, dy, Trans::No, kernel, Trans::Yes, &mut dcols, false);
    let mut dx = vec![T::zero(); g.n * g.h * g.w * g.ci];
    col2im(&dcols, g, &mut dx);
    (dx, dk, db)
}

/// Geometry of the stride-2, 2×2 transpose convolution (output is `2h × 2w`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub co: usize,
}

/// `y[2i+a, 2j+b, o] = Σ_c x[i, j, c] · K[a, b, c, o] + bias[o]`.
pub fn conv_transpose_forward<T: Scalar>(x: &[T], kernel: &[T], bias: &[T], g: &UpGeom) -> Vec<T> {
    let m = g.n * g.h * g.w;
    let (ho, wo) = (2 * g.h, 2 * g.w);
    let mut y = vec![T::zero(); g.n * ho * wo * g.co];
    let mut tap = vec![T::zero(); m * g.co];
    let block = g.ci * g.co;
    for a in 0..2 {
        for b in 0..2 {
            let k_ab = &kernel[(a * 2 + b) * block..(a * 2 + b + 1) * block];
            gemm(m, g.ci, g.co, x, Trans::No, k_ab, Trans::No, &mut tap, false);
            for bn in 0..g.n {
                for i in 0..g.h {
                    for j in 0..g.w {
                        let src = ((bn * g.h + i) * g.w + j) * g.co;
                        let dst = ((bn * ho + 2 * i + a) * wo + 2 * j + b) * g.co;
                        for o in 0..g.co {
                            y[dst + o] = tap[src + o] + bias[o];
                        }
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dkernel, dbias)`.
pub fn conv_transpose_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    g: &UpGeom,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = g.n * g.h * g.w;
    let (ho, wo) = (2 * g.h, 2 * g.w);
    let block = g.ci * g.co;
    let mut dx = vec![T::zero(); m * g.ci];
    let mut dk = vec![T::zero(); 4 * block];
    let mut db = vec![T::zero(); g.co];
    for row in dy.chunks_exact(g.co) {
        for (d, v) in db.iter_mut().zip(row) {
            *d = *d + *v;
        }
    }
    let mut tap = vec![T::zero(); m * g.co];
    for a in 0..2 {
        for b in 0..2 {
            for bn in 0..g.n {
                for i in 0..g.h {
                    for j in 0..g.w {
                        let dst = ((bn * g.h + i) * g.w + j) * g.co;
                        let src = ((bn * ho + 2 * i + a) * wo + 2 * j + b) * g.co;
                        tap[dst..dst + g.co].copy_from_slice(&dy[src..src + g.co]);
                    }
                }
            }
            let idx = a * 2 + b;
            let k_ab = &kernel[idx * block..(idx + 1) * block];
            gemm(m, g.co, g.ci, &tap, Trans::No, k_ab, Trans::Yes, &mut dx, true);
            gemm(
                g.ci,
                m,
                g.co,
                x,
                Trans::Yes,
                &tap,
                Trans::No,
                &mut dk[idx * block..(idx + 1) * block],
                false,
            );
        }
    }
    (dx, dk, db)
}

/// 2×2 non-overlapping max pool. Returns the pooled buffer and, for each
/// output element, the flat input index it was taken from.
pub fn maxpool2_forward<T: Scalar>(x: &[T], (n, h, w, c): (usize, usize, usize, usize)) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * ho * wo * c);
    let mut arg = Vec::with_capacity(n * ho * wo * c);
    for b in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut best_v = T::neg_infinity();
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                        if best == usize::MAX || x[idx] > best_v {
                            best = idx;
                            best_v = x[idx];
                        }
                    }
                    y.push(best_v);
                    arg.push(best);
                }
            }
        }
    }
    (y, arg)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2_forward<T: Scalar>(x: &[T], (n, h, w, c): (usize, usize, usize, usize)) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); n * ho * wo * c];
    for b in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                let src = ((b * h + i / 2) * w + j / 2) * c;
                let dst = ((b * ho + i) * wo + j) * c;
                y[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &[T], (n, h, w, c): (usize, usize, usize, usize)) -> Vec<T> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for i in 0..ho {
            for j in 0..wo {
                let dst = ((b * h + i / 2) * w + j / 2) * c;
                let src = ((b * ho + i) * wo + j) * c;
                for ch in 0..c {
                    dx[dst + ch] = dx[dst + ch] + dy[src + ch];
                }
            }
        }
    }
    dx
}

/// Per-sample, per-group normalization statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn group_norm_forward<T: Scalar>(
    x: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
    groups: usize,
    gain: &[T],
    shift: &[T],
    eps: T,
) -> (Vec<T>, GroupStats<T>) {
    let cg = c / groups;
    let count = T::lit((h * w * cg) as f64);
    let mut stats = GroupStats {
        mean: vec![T::zero(); n * groups],
        rstd: vec![T::zero(); n * groups],
    };
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        let plane = &x[b * h * w * c..(b + 1) * h * w * c];
        for gi in 0..groups {
            let chans = gi * cg..(gi + 1) * cg;
            let mut sum = T::zero();
            for px in plane.chunks_exact(c) {
                sum = sum + px[chans.clone()].iter().copied().sum::<T>();
            }
            let mean = sum / count;
            let mut var = T::zero();
            for px in plane.chunks_exact(c) {
                for &v in &px[chans.clone()] {
                    var = var + (v - mean) * (v - mean);
                }
            }
            var = var / count;
            let rstd = T::one() / (var + eps).sqrt();
            stats.mean[b * groups + gi] = mean;
            stats.rstd[b * groups + gi] = rstd;
            for p in 0..h * w {
                let base = b * h * w * c + p * c;
                for ch in chans.clone() {
                    y[base + ch] = (x[base + ch] - mean) * rstd * gain[ch] + shift[ch];
                }
            }
        }
    }
    (y, stats)
}

/// Returns `(dx, dgain, dshift)`.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    (n, h, w, c): (usize, usize, usize, usize),
    groups: usize,
    gain: &[T],
    stats: &GroupStats<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cg = c / groups;
    let count = T::lit((h * w * cg) as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgain = vec![T::zero(); c];
    let mut dshift = vec![T::zero(); c];
    for b in 0..n {
        for gi in 0..groups {
            let mean = stats.mean[b * groups + gi];
            let rstd = stats.rstd[b * groups + gi];
            let chans = gi * cg..(gi + 1) * cg;
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for p in 0..h * w {
                let base = b * h * w * c + p * c;
                for ch in chans.clone() {
                    let xhat = (x[base + ch] - mean) * rstd;
                    let g = dy[base + ch];
                    dgain[ch] = dgain[ch] + g * xhat;
                    dshift[ch] = dshift[ch] + g;
                    let dxhat = g * gain[ch];
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                }
            }
            let m1 = sum_dxhat / count;
            let m2 = sum_dxhat_xhat / count;
            for p in 0..h * w {
                let base = b * h * w * c + p * c;
                for ch in chans.clone() {
                    let xhat = (x[base + ch] - mean) * rstd;
                    let dxhat = dy[base + ch] * gain[ch];
                    dx[base + ch] = rstd * (dxhat - m1 - xhat * m2);
                }
            }
        }
    }
    (dx, dgain, dshift)
}

/// Indices of the `k` retained modes along an axis of length `len`:
/// the `ceil(k/2)` lowest non-negative frequencies and the `floor(k/2)`
/// highest (negative) ones. `k == len` keeps every mode.
pub fn retained_modes(len: usize, k: usize) -> Vec<usize> {
    let k = k.min(len);
    let pos = k.div_ceil(2);
    let neg = k - pos;
    (0..pos).chain(len - neg..len).collect()
}

/// Mode set and channel counts of a spectral mixing op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub ci: usize,
    pub co: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// `Z[k, o] = Σ_i R[k, i, o] · F[k, i]` over retained modes `k`; other modes are zero.
pub fn spectral_mix_forward<T: Scalar>(
    f: &[Complex<T>],
    r: &[Complex<T>],
    g: &MixGeom,
) -> Vec<Complex<T>> {
    let zero = Complex::new(T::zero(), T::zero());
    let mut z = vec![zero; g.n * g.h * g.w * g.co];
    let kw = g.cols.len();
    for b in 0..g.n {
        for (a, &row) in g.rows.iter().enumerate() {
            for (bb, &col) in g.cols.iter().enumerate() {
                let px = (b * g.h + row) * g.w + col;
                let fin = &f[px * g.ci..(px + 1) * g.ci];
                let rm = &r[(a * kw + bb) * g.ci * g.co..(a * kw + bb + 1) * g.ci * g.co];
                let out = &mut z[px * g.co..(px + 1) * g.co];
                for (i, fv) in fin.iter().enumerate() {
                    let rrow = &rm[i * g.co..(i + 1) * g.co];
                    for (o, rv) in rrow.iter().enumerate() {
                        out[o] += *rv * *fv;
                    }
                }
            }
        }
    }
    z
}

/// Returns `(dF, dR)` given `dZ`, using the `∂L/∂re + i·∂L/∂im` gradient convention.
pub fn spectral_mix_backward<T: Scalar>(
    f: &[Complex<T>],
    r: &[Complex<T>],
    dz: &[Complex<T>],
    g: &MixGeom,
) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
    let zero = Complex::new(T::zero(), T::zero());
    let mut df = vec![zero; f.len()];
    let mut dr = vec![zero; r.len()];
    let kw = g.cols.len();
    for b in 0..g.n {
        for (a, &row) in g.rows.iter().enumerate() {
            for (bb, &col) in g.cols.iter().enumerate() {
                let px = (b * g.h + row) * g.w + col;
                let blk = (a * kw + bb) * g.ci * g.co;
                let dzo = &dz[px * g.co..(px + 1) * g.co];
                for i in 0..g.ci {
                    let fv = f[px * g.ci + i];
                    let mut acc = zero;
                    for (o, dzv) in dzo.iter().enumerate() {
                        let rv = r[blk + i * g.co + o];
                        acc += rv.conj() * *dzv;
                        dr[blk + i * g.co + o] += fv.conj() * *dzv;
                    }
                    df[px * g.ci + i] += acc;
                }
            }
        }
    }
    (df, dr)
}
