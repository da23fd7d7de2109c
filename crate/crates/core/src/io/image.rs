use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::RealGrid;

/// Nearest-rank 99th percentile of `|x|`.
pub fn clip_level(data: &[f64]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = data.iter().map(|v| v.abs()).collect();
    a.sort_by(|x, y| x.total_cmp(y));
    let rank = ((0.99 * a.len() as f64).ceil() as usize).max(1);
    a[rank - 1]
}

/// Grey level for amplitude `v` under symmetric clip `c`: `−c → 0`,
/// `0 → 128`, `+c → 255`.
pub fn grey_level(v: f64, c: f64) -> u8 {
    let u = if c > 0.0 { (v / c).clamp(-1.0, 1.0) } else { 0.0 };
    (127.5 * (u + 1.0)).round() as u8
}

/// Binary PGM of a `(time, trace, 1)` section: time runs down, traces across.
pub fn encode_pgm(grid: &RealGrid<f64>) -> Result<Vec<u8>> {
    if grid.rank() != 3 || grid.channels() != 1 {
        return shape_err(format!("images are drawn from (time, trace, 1) grids, got {:?}", grid.dims()));
    }
    if !grid.is_finite() {
        return Err(Error::NonFinite("section contains non-finite amplitudes".into()));
    }
    let c = clip_level(grid.data());
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.data().iter().map(|&v| grey_level(v, c)));
    Ok(out)
}

pub fn export_section_image(grid: &RealGrid<f64>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pgm(grid)?)?;
    Ok(())
}
