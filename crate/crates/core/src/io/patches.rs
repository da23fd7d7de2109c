use serde::{Deserialize, Serialize};

use super::NormStats;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{RealGrid, RngState};

/// Where a patch came from and how it was scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchIndex {
    pub source: usize,
    /// `(t0, x0)` of the top-left sample.
    pub origin: (usize, usize),
    pub size: (usize, usize),
    pub stride: (usize, usize),
    pub stats: NormStats,
}

/// Window origins along one axis: every `stride` from 0, plus a final
/// window flush with the far edge when the stride does not land on it.
pub fn window_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=len - size).step_by(stride).collect();
    if *out.last().unwrap() + size < len {
        out.push(len - size);
    }
    out
}

fn crop(grid: &RealGrid<f64>, t0: usize, x0: usize, h: usize, w: usize) -> RealGrid<f64> {
    let (_, gw, c) = grid.hwc();
    let data = grid.data();
    RealGrid::from_fn(&[h, w, c], |i| {
        let (t, rest) = (i / (w * c), i % (w * c));
        data[((t0 + t) * gw + x0) * c + rest]
    })
}

/// Cuts `(H, W, C)` windows out of a rank-3 grid in row-major origin order,
/// optionally shuffled by `rng`.
pub fn extract_patches(
    grid: &RealGrid<f64>,
    source: usize,
    size: (usize, usize),
    stride: (usize, usize),
    rng: &mut RngState,
    shuffle: bool,
) -> Result<(Vec<RealGrid<f64>>, Vec<PatchIndex>)> {
    if grid.rank() != 3 {
        return shape_err(format!("patches come from rank-3 grids, got {:?}", grid.dims()));
    }
    let (h, w, _) = grid.hwc();
    if !size.0.is_power_of_two() || !size.1.is_power_of_two() {
        return invalid(format!("patch size {size:?} must be powers of two"));
    }
    if size.0 > h || size.1 > w {
        return invalid(format!("patch size {size:?} exceeds section {h}×{w}"));
    }
    if stride.0 == 0 || stride.1 == 0 {
        return invalid("patch stride must be positive");
    }
    let mut index: Vec<PatchIndex> = window_origins(h, size.0, stride.0)
        .into_iter()
        .flat_map(|t0| window_origins(w, size.1, stride.1).into_iter().map(move |x0| (t0, x0)))
        .map(|origin| PatchIndex { source, origin, size, stride, stats: NormStats::IDENTITY })
        .collect();
    if shuffle {
        rng.shuffle(&mut index);
    }
    let patches = index.iter().map(|p| crop(grid, p.origin.0, p.origin.1, size.0, size.1)).collect();
    Ok((patches, index))
}

/// Reassembles patches onto a `dims` grid, averaging where windows overlap.
pub fn stitch_patches(patches: &[RealGrid<f64>], index: &[PatchIndex], dims: &[usize]) -> Result<RealGrid<f64>> {
    if patches.len() != index.len() {
        return shape_err(format!("{} patches for {} index entries", patches.len(), index.len()));
    }
    if dims.len() != 3 {
        return shape_err(format!("stitch target must be rank 3, got {dims:?}"));
    }
    let (h, w, c) = (dims[0], dims[1], dims[2]);
    let mut sum = vec![0.0; h * w * c];
    let mut hits = vec![0u32; h * w];
    for (p, ix) in patches.iter().zip(index) {
        let (ph, pw) = ix.size;
        if p.dims() != [ph, pw, c] {
            return shape_err(format!("patch {:?} does not match index size {:?} with {c} channels", p.dims(), ix.size));
        }
        if ix.origin.0 + ph > h || ix.origin.1 + pw > w {
            return shape_err(format!("patch at {:?} overruns the {h}×{w} target", ix.origin));
        }
        for t in 0..ph {
            for x in 0..pw {
                let dst = (ix.origin.0 + t) * w + ix.origin.1 + x;
                hits[dst] += 1;
                for k in 0..c {
                    sum[dst * c + k] += p.data()[(t * pw + x) * c + k];
                }
            }
        }
    }
    if let Some(i) = hits.iter().position(|&n| n == 0) {
        return invalid(format!("sample ({}, {}) is not covered by any patch", i / w, i % w));
    }
    Ok(RealGrid::from_fn(dims, |i| sum[i] / hits[i / c] as f64))
}
