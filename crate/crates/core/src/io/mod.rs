//! Persistence and data plumbing: grid files, SEG-Y, patches,
//! normalization, images and CSV tables.

mod grid_file;
mod image;
mod normalize;
mod patches;
mod segy;

use std::path::Path;

use serde::Serialize;

pub use grid_file::{read_grid, write_grid, GridFile, DTYPE_F32_LE, GRID_MAGIC, GRID_VERSION};
pub use image::{clip_level, encode_pgm, export_section_image, grey_level};
pub use normalize::{denormalize, normalize, normalize_with, NormScheme, NormStats};
pub use patches::{extract_patches, stitch_patches, window_origins, PatchIndex};
pub use segy::{
    ibm32_to_real, read_segy, real_to_ibm32, section_from_segy, write_segy, BinaryHeader, SampleFormat, SegyTraceRecord,
};

use crate::error::Result;

/// Writes one CSV row per record with a header row taken from the field names.
pub fn write_csv<S: Serialize>(path: impl AsRef<Path>, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
