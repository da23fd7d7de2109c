//! Seismic reflectivity inversion toolkit.
//!
//! - [`tensor`]: differentiable grids, FFTs and the reverse-mode tape.
//! - [`seismic`]: convolutional forward model and synthetic section generation.
//! - [`baseline`]: L1-regularized sparse-spike deconvolution (ISTA / FISTA).
//! - [`net`]: the spectral U-Net and its checkpoint format.
//! - [`train`]: losses, metrics, Adam and the training loop.
//! - [`io`]: grid files, SEG-Y ingestion, patching, normalization, exports.

pub mod baseline;
pub mod error;
pub mod io;
pub mod net;
pub mod seismic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
