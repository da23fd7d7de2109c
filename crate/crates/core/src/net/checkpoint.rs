//! Checkpoint layout, little-endian throughout:
//!
//! ```text
//! "OSN1"
//! u32 json_len, json_len bytes of UTF-8 JSON {config, fingerprint, meta}
//! u32 param_count
//! per parameter:
//!   u32 name_len, name bytes
//!   u32 rank, rank × u32 dims
//!   u8 dtype (0 real, 1 complex)
//!   f32 values (complex as interleaved re, im)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{init_params, ModelState, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{Complex, ComplexGrid, RealGrid, RngState, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OSN1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    fingerprint: String,
    #[serde(default)]
    meta: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit a u32 checkpoint field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes `model` with free-form metadata (e.g. normalization statistics).
pub fn checkpoint_bytes<T: Scalar>(model: &ModelState<T>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header { config: model.config.clone(), fingerprint: model.fingerprint(), meta: meta.clone() };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    put_u32(&mut out, model.store.len())?;
    for p in model.store.iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        let dims = p.value.dims();
        put_u32(&mut out, dims.len())?;
        for &d in dims {
            put_u32(&mut out, d)?;
        }
        match &p.value {
            Tensor::Real(g) => {
                out.push(0);
                for v in g.data() {
                    out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                }
            }
            Tensor::Complex(g) => {
                out.push(1);
                for v in g.data() {
                    out.extend_from_slice(&(v.re.as_f64() as f32).to_le_bytes());
                    out.extend_from_slice(&(v.im.as_f64() as f32).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("parameter size overflows".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses a checkpoint. When `expected` is given its fingerprint must match
/// the stored one; the parameter names, shapes and kinds must match the
/// layout the stored config builds.
pub fn checkpoint_from_bytes<T: Scalar>(
    bytes: &[u8],
    expected: Option<&NetworkConfig>,
) -> Result<(ModelState<T>, serde_json::Value)> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::Format("not a checkpoint: bad magic, expected \"OSN1\"".into()));
    }
    let n = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(n)?)?;
    let stored = header.config.fingerprint();
    if stored != header.fingerprint {
        return Err(Error::Format(format!(
            "checkpoint fingerprint {} does not match its own config ({stored})",
            header.fingerprint
        )));
    }
    if let Some(cfg) = expected {
        if cfg.fingerprint() != stored {
            return Err(Error::InvalidArgument(format!(
                "architecture fingerprint mismatch: checkpoint {stored}, requested {}",
                cfg.fingerprint()
            )));
        }
    }
    let mut model = init_params::<T>(&header.config, &mut RngState::new(0))?;
    let count = r.u32()?;
    if count != model.store.len() {
        return Err(Error::Format(format!("checkpoint holds {count} parameters, the config builds {}", model.store.len())));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let dtype = r.take(1)?[0];
        let p = model.store.get_mut(id);
        if name != p.name || dims != p.value.dims() || dtype != p.value.is_complex() as u8 {
            return Err(Error::Format(format!(
                "parameter {name} {dims:?} (dtype {dtype}) does not match expected {} {:?}",
                p.name,
                p.value.dims()
            )));
        }
        let volume: usize = dims.iter().product();
        p.value = if dtype == 0 {
            let v = r.f32s(volume)?;
            Tensor::Real(RealGrid::from_vec(&dims, v.into_iter().map(|x| T::lit(x as f64)).collect())?)
        } else {
            let v = r.f32s(2 * volume)?;
            let data = v.chunks_exact(2).map(|c| Complex::new(T::lit(c[0] as f64), T::lit(c[1] as f64))).collect();
            Tensor::Complex(ComplexGrid::from_vec(&dims, data)?)
        };
        p.zero_grad();
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last parameter", bytes.len() - r.at)));
    }
    Ok((model, header.meta))
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &ModelState<T>, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model, meta)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    expected: Option<&NetworkConfig>,
) -> Result<(ModelState<T>, serde_json::Value)> {
    checkpoint_from_bytes(&std::fs::read(path)?, expected)
}
