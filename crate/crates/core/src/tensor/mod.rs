//! Differentiable dense-array substrate.

mod fft;
mod graph;
mod grid;
pub mod gradcheck;
pub mod kernels;
pub mod ops;
mod param;
mod rng;
mod scalar;

pub use fft::{fft2, ifft2, FftEngine};
pub use graph::{Activation, Gradients, Graph, PairLoss, Var};
pub use grid::{ComplexGrid, RealGrid, Tensor};
pub use kernels::Padding;
pub use param::{ParamId, ParamStore, Parameter};
pub use rng::RngState;
pub use rustfft::num_complex::Complex;
pub use scalar::{gemm, Scalar, Trans};
