//! 2D discrete Fourier transforms over the spatial axes of a grid.
//!
//! Convention: the forward transform carries the `1/(H·W)` factor and the
//! inverse is unnormalized, so `ifft2(fft2(x)) == x`. Under this convention
//! Parseval reads `Σ|X|² = (1/(H·W)) · Σ|x|²`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::{ComplexGrid, RealGrid, Scalar};
use crate::error::{shape_err, Result};

/// Caches FFT plans across calls.
pub struct FftEngine<T: Scalar> {
    planner: FftPlanner<T>,
}

impl<T: Scalar> Default for FftEngine<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> FftEngine<T> {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
        }
    }

    fn plan(&mut self, len: usize, dir: FftDirection) -> Arc<dyn Fft<T>> {
        self.planner.plan_fft(len, dir)
    }

    /// In-place 2D transform of every `(batch, channel)` plane of an
    /// `n×h×w×c` channel-interleaved buffer. `scale` multiplies the result.
    pub fn transform(
        &mut self,
        data: &mut [Complex<T>],
        (n, h, w, c): (usize, usize, usize, usize),
        dir: FftDirection,
        scale: T,
    ) {
        debug_assert_eq!(data.len(), n * h * w * c);
        let row_fft = self.plan(w, dir);
        let col_fft = self.plan(h, dir);
        let scratch_len = row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len());
        let zero = Complex::new(T::zero(), T::zero());
        let mut scratch = vec![zero; scratch_len];
        let mut plane = vec![zero; h * w];
        let mut column = vec![zero; h];
        for b in 0..n {
            let base = b * h * w * c;
            for ch in 0..c {
                for (px, v) in plane.iter_mut().enumerate() {
                    *v = data[base + px * c + ch];
                }
                for row in plane.chunks_exact_mut(w) {
                    row_fft.process_with_scratch(row, &mut scratch);
                }
                for col in 0..w {
                    for r in 0..h {
                        column[r] = plane[r * w + col];
                    }
                    col_fft.process_with_scratch(&mut column, &mut scratch);
                    for r in 0..h {
                        plane[r * w + col] = column[r];
                    }
                }
                for (px, v) in plane.iter().enumerate() {
                    data[base + px * c + ch] = *v * scale;
                }
            }
        }
    }

    /// Forward transform with `1/(H·W)` normalization.
    pub fn fft2(&mut self, x: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
        let shape = nhwc(x.dims())?;
        check_pow2(shape.1, shape.2)?;
        let mut out = x.clone();
        let scale = T::one() / T::lit((shape.1 * shape.2) as f64);
        self.transform(out.data_mut(), shape, FftDirection::Forward, scale);
        Ok(out)
    }

    /// Unnormalized inverse transform.
    pub fn ifft2(&mut self, x: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
        let shape = nhwc(x.dims())?;
        check_pow2(shape.1, shape.2)?;
        let mut out = x.clone();
        self.transform(out.data_mut(), shape, FftDirection::Inverse, T::one());
        Ok(out)
    }
}

/// Rank-3 or rank-4 dims as `(batch, h, w, c)`.
pub(crate) fn nhwc(dims: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match dims.len() {
        3 => Ok((1, dims[0], dims[1], dims[2])),
        4 => Ok((dims[0], dims[1], dims[2], dims[3])),
        _ => shape_err(format!("expected rank 3 or 4 grid, got dims {dims:?}")),
    }
}

fn check_pow2(h: usize, w: usize) -> Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return shape_err(format!(
            "FFT needs power-of-two spatial dims, got {h}×{w}"
        ));
    }
    Ok(())
}

/// Per-channel 2D DFT of a real grid with forward normalization `1/(H·W)`.
pub fn fft2<T: Scalar>(x: &RealGrid<T>) -> Result<ComplexGrid<T>> {
    FftEngine::new().fft2(&ComplexGrid::from_real(x))
}

/// Unnormalized per-channel inverse 2D DFT; exact inverse of [`fft2`].
pub fn ifft2<T: Scalar>(x: &ComplexGrid<T>) -> Result<ComplexGrid<T>> {
    FftEngine::new().ifft2(x)
}
