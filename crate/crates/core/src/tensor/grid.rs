use rustfft::num_complex::Complex;

use super::Scalar;
use crate::error::{shape_err, Result};

/// Dense row-major real array.
///
/// Sections and patches are rank 3 `(height, width, channels)`; network
/// activations carry a leading batch axis `(batch, height, width, channels)`.
/// Kernels are rank 4 `(kh, kw, c_in, c_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

/// Dense row-major complex array with the same dimension conventions as [`RealGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid<T> {
    dims: Vec<usize>,
    data: Vec<Complex<T>>,
}

fn volume(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl<T: Scalar> RealGrid<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: &[usize], value: T) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![value; volume(dims)],
        }
    }

    /// Rank-3 `(height, width, channels)` grid of zeros.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::zeros(&[height, width, channels])
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if volume(dims) != data.len() {
            return shape_err(format!(
                "dims {dims:?} need {} values, got {}",
                volume(dims),
                data.len()
            ));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Self {
            dims: dims.to_vec(),
            data: (0..volume(dims)).map(&mut f).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Spatial shape of a rank-3 or rank-4 grid, `(height, width, channels)`.
    pub fn hwc(&self) -> (usize, usize, usize) {
        let d = &self.dims;
        match d.len() {
            3 => (d[0], d[1], d[2]),
            4 => (d[1], d[2], d[3]),
            _ => panic!("hwc() on rank-{} grid", d.len()),
        }
    }

    pub fn height(&self) -> usize {
        self.hwc().0
    }

    pub fn width(&self) -> usize {
        self.hwc().1
    }

    pub fn channels(&self) -> usize {
        self.hwc().2
    }

    /// Index into a rank-3 grid.
    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> T {
        let (_, w, c) = self.hwc();
        self.data[(row * w + col) * c + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let (_, w, c) = self.hwc();
        self.data[(row * w + col) * c + ch] = value;
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        if volume(dims) != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {dims:?}", self.dims));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Copy of channels `range` of a rank-3 grid.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let (h, w, c) = self.hwc();
        if self.rank() != 3 || range.end > c || range.start > range.end {
            return shape_err(format!("channel slice {range:?} of {:?}", self.dims));
        }
        let nc = range.len();
        let mut out = Vec::with_capacity(h * w * nc);
        for px in 0..h * w {
            out.extend_from_slice(&self.data[px * c + range.start..px * c + range.end]);
        }
        Self::from_vec(&[h, w, nc], out)
    }

    /// Lossless conversion between precisions where the target is at least as wide.
    pub fn cast<U: Scalar>(&self) -> RealGrid<U> {
        RealGrid {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> ComplexGrid<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![Complex::new(T::zero(), T::zero()); volume(dims)],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<Complex<T>>) -> Result<Self> {
        if volume(dims) != data.len() {
            return shape_err(format!(
                "dims {dims:?} need {} values, got {}",
                volume(dims),
                data.len()
            ));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn from_real(grid: &RealGrid<T>) -> Self {
        Self {
            dims: grid.dims().to_vec(),
            data: grid
                .data()
                .iter()
                .map(|&v| Complex::new(v, T::zero()))
                .collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn hwc(&self) -> (usize, usize, usize) {
        let d = &self.dims;
        match d.len() {
            3 => (d[0], d[1], d[2]),
            4 => (d[1], d[2], d[3]),
            _ => panic!("hwc() on rank-{} grid", d.len()),
        }
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        if volume(dims) != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {dims:?}", self.dims));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn re(&self) -> RealGrid<T> {
        RealGrid {
            dims: self.dims.clone(),
            data: self.data.iter().map(|c| c.re).collect(),
        }
    }

    pub fn abs(&self) -> RealGrid<T> {
        RealGrid {
            dims: self.dims.clone(),
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ComplexGrid<U> {
        ComplexGrid {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|c| Complex::new(U::lit(c.re.as_f64()), U::lit(c.im.as_f64())))
                .collect(),
        }
    }
}

/// A real or complex array; the value type carried by graph nodes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor<T> {
    Real(RealGrid<T>),
    Complex(ComplexGrid<T>),
}

impl<T: Scalar> Tensor<T> {
    pub fn dims(&self) -> &[usize] {
        match self {
            Tensor::Real(g) => g.dims(),
            Tensor::Complex(g) => g.dims(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Tensor::Complex(_))
    }

    /// Number of real scalars stored (complex entries count twice).
    pub fn real_count(&self) -> usize {
        match self {
            Tensor::Real(g) => g.len(),
            Tensor::Complex(g) => 2 * g.len(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Tensor::Real(g) => Tensor::Real(RealGrid::zeros(g.dims())),
            Tensor::Complex(g) => Tensor::Complex(ComplexGrid::zeros(g.dims())),
        }
    }

    pub fn as_real(&self) -> Option<&RealGrid<T>> {
        match self {
            Tensor::Real(g) => Some(g),
            Tensor::Complex(_) => None,
        }
    }

    pub fn as_complex(&self) -> Option<&ComplexGrid<T>> {
        match self {
            Tensor::Complex(g) => Some(g),
            Tensor::Real(_) => None,
        }
    }

    /// Read the `i`-th real scalar (complex entries interleave re, im).
    pub fn get_scalar(&self, i: usize) -> T {
        match self {
            Tensor::Real(g) => g.data()[i],
            Tensor::Complex(g) => {
                let c = g.data()[i / 2];
                if i % 2 == 0 {
                    c.re
                } else {
                    c.im
                }
            }
        }
    }

    pub fn set_scalar(&mut self, i: usize, v: T) {
        match self {
            Tensor::Real(g) => g.data_mut()[i] = v,
            Tensor::Complex(g) => {
                let c = &mut g.data_mut()[i / 2];
                if i % 2 == 0 {
                    c.re = v
                } else {
                    c.im = v
                }
            }
        }
    }

    /// Elementwise `self += other`; both must have the same kind and dims.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        match (self, other) {
            (Tensor::Real(a), Tensor::Real(b)) => {
                debug_assert_eq!(a.dims(), b.dims());
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x = *x + *y;
                }
            }
            (Tensor::Complex(a), Tensor::Complex(b)) => {
                debug_assert_eq!(a.dims(), b.dims());
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += *y;
                }
            }
            _ => panic!("add_assign between real and complex tensors"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Tensor::Real(g) => g.is_finite(),
            Tensor::Complex(g) => g.is_finite(),
        }
    }
}
