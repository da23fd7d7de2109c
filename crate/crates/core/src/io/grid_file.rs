use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::tensor::RealGrid;

pub const GRID_MAGIC: &[u8; 4] = b"OSGD";
pub const GRID_VERSION: u32 = 1;
/// Little-endian IEEE single precision.
pub const DTYPE_F32_LE: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 12 + 4;

/// Binary `(time, trace, channel)` grid with its sampling interval.
///
/// Layout, all integers little-endian `u32`: magic `OSGD`, version, dtype
/// code, three dims, `dt_us`, then the row-major `f32` payload.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub dims: [usize; 3],
    pub dt_us: u32,
    pub data: Vec<f32>,
}

impl GridFile {
    /// Quantizes a section to `f32` and `dt` (seconds) to whole microseconds.
    pub fn from_grid(grid: &RealGrid<f64>, dt: f64) -> Result<Self> {
        if grid.rank() != 3 {
            return invalid(format!("grid files hold rank-3 grids, got {:?}", grid.dims()));
        }
        let us = (dt * 1e6).round();
        if !(us >= 1.0 && us <= u32::MAX as f64) {
            return invalid(format!("sampling interval {dt} s is not a positive whole number of microseconds"));
        }
        let dims = [grid.dims()[0], grid.dims()[1], grid.dims()[2]];
        for d in dims {
            if d > u32::MAX as usize {
                return invalid(format!("dimension {d} exceeds the u32 header field"));
            }
        }
        Ok(Self {
            dims,
            dt_us: us as u32,
            data: grid.data().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt_us as f64 * 1e-6
    }

    pub fn to_grid(&self) -> RealGrid<f64> {
        RealGrid::from_fn(&self.dims, |i| self.data[i] as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(GRID_MAGIC);
        for v in [GRID_VERSION, DTYPE_F32_LE, self.dims[0] as u32, self.dims[1] as u32, self.dims[2] as u32, self.dt_us] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("grid file is {} bytes, shorter than its {HEADER_LEN}-byte header", bytes.len())));
        }
        if &bytes[..4] != GRID_MAGIC {
            return Err(Error::Format(format!("bad grid magic {:?}, expected \"OSGD\"", String::from_utf8_lossy(&bytes[..4]))));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != GRID_VERSION {
            return Err(Error::Format(format!("unsupported grid version {}", word(0))));
        }
        if word(1) != DTYPE_F32_LE {
            return Err(Error::Format(format!("unsupported grid dtype code {}", word(1))));
        }
        let dims = [word(2) as usize, word(3) as usize, word(4) as usize];
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let payload = &bytes[HEADER_LEN..];
        if count.and_then(|c| c.checked_mul(4)) != Some(payload.len()) {
            return Err(Error::Format(format!("payload of {} bytes does not match dims {dims:?}", payload.len())));
        }
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { dims, dt_us: word(5), data })
    }
}

pub fn write_grid(path: impl AsRef<Path>, file: &GridFile) -> Result<()> {
    std::fs::write(path, file.to_bytes())?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridFile> {
    GridFile::from_bytes(&std::fs::read(path)?)
}
